"""Synthetic video datasets with planted temporal label structure, plus I/O.

Each generated video is a sequence of contiguous segments, one per label;
a segment's frames are that class's fixed unit-norm prototype plus Gaussian
noise. Contiguous segments make frame subsampling informative: a sampler
that covers the whole timeline sees every label, one that reads only the
start or end does not.

On-disk formats (both hold frames as 32-bit floats; records are converted
to float64 in memory):

* NDJSON: one record per line, UTF-8, LF:
  ``{"id": str, "labels": [int...], "frames": [[float x D] x N]}``
* Binary "FDS1", little-endian: magic ``FDS1``, u32 D, u32 record count;
  per record u32 id-length + id bytes, u16 label-count + u16 labels,
  u32 N, then N*D f32 frames row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64, derive

_MAGIC = b"FDS1"


@dataclass
class VideoRecord:
    """One video: string id, sorted label set, N x D frame features."""

    id: str
    labels: tuple[int, ...]
    frames: np.ndarray

    def __post_init__(self):
        self.labels = tuple(int(c) for c in self.labels)
        if not self.labels:
            raise ValueError(f"record {self.id}: empty label set")
        if any(b <= a for a, b in zip(self.labels, self.labels[1:])):
            raise ValueError(f"record {self.id}: labels must be strictly increasing")
        if any(c < 0 for c in self.labels):
            raise ValueError(f"record {self.id}: negative label")
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"record {self.id}: frames must be a non-empty N x D matrix")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError(f"record {self.id}: non-finite frame values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class GenSpec:
    """Parameters of the synthetic generator."""

    num_videos: int
    num_classes: int
    feature_dim: int
    n_min: int
    n_max: int
    labels_per_video: tuple[int, int] = (1, 3)
    segment_noise: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_videos < 1:
            raise ValueError("num_videos must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if not (1 <= self.n_min <= self.n_max):
            raise ValueError(f"bad frame-count range [{self.n_min}, {self.n_max}]")
        lo, hi = self.labels_per_video
        if not (1 <= lo <= hi <= self.num_classes):
            raise ValueError(f"bad labels_per_video range [{lo}, {hi}]")
        if self.segment_noise < 0:
            raise ValueError("segment_noise must be >= 0")
        object.__setattr__(self, "labels_per_video", (int(lo), int(hi)))


def class_prototypes(spec: GenSpec) -> np.ndarray:
    """The fixed unit-norm prototype vector of every class, [m, D]."""
    protos = np.empty((spec.num_classes, spec.feature_dim))
    for c in range(spec.num_classes):
        gen = SplitMix64(derive(spec.seed, "proto", c))
        v = gen.normals(spec.feature_dim)
        protos[c] = v / np.linalg.norm(v)
    return protos


def _segment_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    """Split [0, n) into `parts` contiguous near-equal pieces (diff <= 1)."""
    base, rem = divmod(n, parts)
    bounds = []
    start = 0
    for i in range(parts):
        stop = start + base + (1 if i < rem else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def generate_dataset(spec: GenSpec) -> list[VideoRecord]:
    """Deterministic dataset of `spec.num_videos` records."""
    protos = class_prototypes(spec)
    records = []
    for i in range(spec.num_videos):
        gen = SplitMix64(derive(spec.seed, "video", i))
        lo, hi = spec.labels_per_video
        count = gen.randint(lo, hi)
        labels = tuple(sorted(gen.sample_without_replacement(spec.num_classes, count)))
        n = gen.randint(spec.n_min, spec.n_max)
        n = max(n, count)  # every label needs at least one frame
        frames = np.empty((n, spec.feature_dim))
        for (start, stop), label in zip(_segment_bounds(n, count), labels):
            noise = gen.normals((stop - start) * spec.feature_dim)
            frames[start:stop] = protos[label] + spec.segment_noise * noise.reshape(
                stop - start, spec.feature_dim
            )
        frames = frames.astype(np.float32).astype(np.float64)
        records.append(VideoRecord(id=f"v{i:06d}", labels=labels, frames=frames))
    return records


def _common_dim(records) -> int:
    if not records:
        raise ValueError("cannot write an empty record list")
    dim = records[0].frames.shape[1]
    for r in records:
        if r.frames.shape[1] != dim:
            raise ValueError(
                f"record {r.id}: feature dim {r.frames.shape[1]} != {dim} of first record"
            )
    return dim


def write_records(records: list, path, fmt: str = "bin") -> None:
    """Write records as NDJSON or FDS1 binary."""
    if fmt == "ndjson":
        _write_ndjson(records, path)
    elif fmt == "bin":
        _write_bin(records, path)
    else:
        raise ValueError(f"unknown format {fmt!r} (want 'ndjson' or 'bin')")


def read_records(path, fmt: str = "bin") -> list:
    if fmt == "ndjson":
        return _read_ndjson(path)
    if fmt == "bin":
        return _read_bin(path)
    raise ValueError(f"unknown format {fmt!r} (want 'ndjson' or 'bin')")


def _write_ndjson(records, path) -> None:
    _common_dim(records)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            frames32 = r.frames.astype(np.float32)
            doc = {
                "id": r.id,
                "labels": list(r.labels),
                "frames": [[float(v) for v in row] for row in frames32],
            }
            fh.write(json.dumps(doc, separators=(",", ":")) + "\n")


def _read_ndjson(path) -> list:
    records = []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})")
            if not isinstance(doc, dict):
                raise ValueError(f"{path}: line {lineno}: record must be an object")
            missing = {"id", "labels", "frames"} - doc.keys()
            if missing:
                raise ValueError(
                    f"{path}: line {lineno}: missing key(s) {sorted(missing)}"
                )
            extra = doc.keys() - {"id", "labels", "frames"}
            if extra:
                raise ValueError(f"{path}: line {lineno}: unknown key(s) {sorted(extra)}")
            frames = np.asarray(doc["frames"], dtype=np.float32).astype(np.float64)
            if frames.ndim != 2:
                raise ValueError(f"{path}: line {lineno}: frames must be a matrix")
            if dim is None:
                dim = frames.shape[1]
            elif frames.shape[1] != dim:
                raise ValueError(
                    f"{path}: line {lineno}: feature dim {frames.shape[1]} != {dim}"
                )
            try:
                records.append(VideoRecord(doc["id"], tuple(doc["labels"]), frames))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}")
    return records


def _write_bin(records, path) -> None:
    dim = _common_dim(records)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", dim, len(records)))
        for r in records:
            ident = r.id.encode("utf-8")
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(struct.pack(f"<H{len(r.labels)}H", len(r.labels), *r.labels))
            fh.write(struct.pack("<I", r.frames.shape[0]))
            fh.write(r.frames.astype("<f4").tobytes())


def _read_bin(path) -> list:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    off = 4

    def take(size, what):
        nonlocal off
        if off + size > len(blob):
            raise ValueError(f"{path}: truncated while reading {what} at offset {off}")
        piece = blob[off : off + size]
        off += size
        return piece

    dim, count = struct.unpack("<II", take(8, "header"))
    records = []
    for _ in range(count):
        (id_len,) = struct.unpack("<I", take(4, "id length"))
        ident = take(id_len, "id").decode("utf-8")
        (label_count,) = struct.unpack("<H", take(2, "label count"))
        labels = struct.unpack(f"<{label_count}H", take(2 * label_count, "labels"))
        (n,) = struct.unpack("<I", take(4, "frame count"))
        raw = take(4 * n * dim, "frames")
        frames = np.frombuffer(raw, dtype="<f4").reshape(n, dim).astype(np.float64)
        records.append(VideoRecord(ident, labels, frames))
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes after records")
    return records


def split(records: list, fractions, seed: int):
    """Deterministic shuffle-and-split into len(fractions) disjoint lists."""
    if not records:
        raise ValueError("cannot split an empty record list")
    fractions = [float(f) for f in fractions]
    if any(f <= 0 for f in fractions):
        raise ValueError(f"all fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got sum {sum(fractions)}")
    n = len(records)
    perm = SplitMix64(derive(seed, "split")).permutation(n)
    shuffled = [records[i] for i in perm]
    raw = [f * n for f in fractions]
    sizes = [int(x) for x in raw]
    leftover = n - sum(sizes)
    # distribute remainder by largest fractional part, ties to lower index
    order = sorted(range(len(sizes)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    parts = []
    start = 0
    for s in sizes:
        parts.append(shuffled[start : start + s])
        start += s
    return tuple(parts)
