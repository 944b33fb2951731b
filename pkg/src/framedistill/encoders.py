"""Video encoders and the shared sigmoid classifier head.

Three encoders map a T x D frame matrix to a fixed-width video embedding:

* H-RNN: frames are cut into ceil(T/l) blocks of l frames; a 2-layer LSTM
  encodes each block (final top-layer state = block embedding, these are the
  intermediates), and a second 2-layer LSTM encodes the block-embedding
  sequence into the video embedding. Gates are i/f/g/o with the standard
  sigmoid/sigmoid/tanh/sigmoid cell; forget biases start at 1, weights are
  Xavier-uniform; dropout sits between the two stacked layers in train mode.
* NetVLAD: soft cluster assignment softmax(x W + b), residual aggregation
  against learnable centers, per-cluster then global L2 normalization, one
  FC layer with multiplicative context gating sigmoid(W h + b) * h.
* NeXtVLAD: frames are first expanded by an FC to lambda*D, reshaped into G
  group vectors, gated by a per-(frame, group) scalar attention, and
  VLAD-aggregated with assignment weights shared across groups, which shrinks
  the assignment matrix by a factor of G/lambda; dropout is applied to the
  aggregated descriptor in train mode.

The classifier head is one sigmoid neuron per class (multi-label, not
softmax) and is shared between a teacher and its student, which also forces
the two embedding widths to be equal.

Checkpoint format "FDM1": magic bytes, one JSON config line, then for each
parameter: u32 name-length, name, u32 rank, rank x u32 dims, f64 data
little-endian. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Tensor
from .rng import SplitMix64, derive


@dataclass(frozen=True)
class HRNNConfig:
    input_dim: int
    num_classes: int
    frames_per_block: int
    cell: int
    dropout: float = 0.5
    kind: str = "hrnn"

    def __post_init__(self):
        if self.frames_per_block < 1:
            raise ValueError("frames_per_block must be >= 1")
        _check_shared(self)


@dataclass(frozen=True)
class NetVLADConfig:
    input_dim: int
    num_classes: int
    clusters: int
    hidden: int
    dropout: float = 0.5
    kind: str = "netvlad"

    def __post_init__(self):
        if self.clusters < 2:
            raise ValueError("clusters must be >= 2")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        _check_shared(self)


@dataclass(frozen=True)
class NeXtVLADConfig:
    input_dim: int
    num_classes: int
    clusters: int
    hidden: int
    groups: int
    expansion: int = 2
    dropout: float = 0.5
    kind: str = "nextvlad"

    def __post_init__(self):
        if self.clusters < 2:
            raise ValueError("clusters must be >= 2")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        width = self.expansion * self.input_dim
        if self.groups < 1 or width % self.groups != 0:
            raise ValueError(
                f"groups ({self.groups}) must divide expansion*input_dim ({width})"
            )
        _check_shared(self)

    @property
    def group_width(self) -> int:
        return self.expansion * self.input_dim // self.groups


def _check_shared(cfg) -> None:
    if cfg.input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    if cfg.num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    if not (0.0 <= cfg.dropout < 1.0):
        raise ValueError(f"dropout {cfg.dropout} outside [0, 1)")


EncoderConfig = HRNNConfig | NetVLADConfig | NeXtVLADConfig

_CONFIG_TYPES = {"hrnn": HRNNConfig, "netvlad": NetVLADConfig, "nextvlad": NeXtVLADConfig}


def config_to_dict(cfg: EncoderConfig) -> dict:
    out = {"kind": cfg.kind, "input_dim": cfg.input_dim, "num_classes": cfg.num_classes,
           "dropout": cfg.dropout}
    if isinstance(cfg, HRNNConfig):
        out.update(frames_per_block=cfg.frames_per_block, cell=cfg.cell)
    elif isinstance(cfg, NetVLADConfig):
        out.update(clusters=cfg.clusters, hidden=cfg.hidden)
    else:
        out.update(clusters=cfg.clusters, hidden=cfg.hidden, groups=cfg.groups,
                   expansion=cfg.expansion)
    return out


def config_from_dict(doc: dict) -> EncoderConfig:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in _CONFIG_TYPES:
        raise ValueError(f"unknown encoder kind {kind!r}")
    return _CONFIG_TYPES[kind](**doc)


def embedding_width(cfg: EncoderConfig) -> int:
    return cfg.cell if isinstance(cfg, HRNNConfig) else cfg.hidden


def check_width_parity(teacher_cfg: EncoderConfig, student_cfg: EncoderConfig) -> None:
    """Teacher and student must produce embeddings of equal width."""
    wt, ws = embedding_width(teacher_cfg), embedding_width(student_cfg)
    if wt != ws:
        raise ValueError(f"embedding widths differ: teacher {wt}, student {ws}")


@dataclass
class VideoEmbedding:
    e: Tensor
    intermediates: list | None = None


def _xavier(gen: SplitMix64, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    return (gen.uniforms(n) * 2.0 - 1.0).reshape(shape) * limit


def _lstm_params(seed: int, name: str, d_in: int, h: int) -> dict:
    gen = SplitMix64(derive(seed, name))
    w = _xavier(gen, d_in + h, 4 * h, (d_in + h, 4 * h))
    b = np.zeros(4 * h)
    b[h : 2 * h] = 1.0  # forget-gate bias
    return {f"{name}_w": Tensor(w, requires_grad=True),
            f"{name}_b": Tensor(b, requires_grad=True)}


def init_params(cfg: EncoderConfig, seed: int) -> dict:
    """Fresh encoder parameters, deterministically derived from the seed."""
    params = {}
    if isinstance(cfg, HRNNConfig):
        h = cfg.cell
        params.update(_lstm_params(seed, "lower1", cfg.input_dim, h))
        params.update(_lstm_params(seed, "lower2", h, h))
        params.update(_lstm_params(seed, "upper1", h, h))
        params.update(_lstm_params(seed, "upper2", h, h))
        return params
    if isinstance(cfg, NetVLADConfig):
        d, c, hid = cfg.input_dim, cfg.clusters, cfg.hidden
        feat = d
    else:
        d, c, hid = cfg.input_dim, cfg.clusters, cfg.hidden
        width = cfg.expansion * d
        feat = cfg.group_width
        gen = SplitMix64(derive(seed, "expand"))
        params["expand_w"] = Tensor(_xavier(gen, d, width, (d, width)), requires_grad=True)
        params["expand_b"] = Tensor(np.zeros(width), requires_grad=True)
        gen = SplitMix64(derive(seed, "attn"))
        params["attn_w"] = Tensor(
            _xavier(gen, width, cfg.groups, (width, cfg.groups)), requires_grad=True
        )
        params["attn_b"] = Tensor(np.zeros(cfg.groups), requires_grad=True)
    gen = SplitMix64(derive(seed, "assign"))
    params["assign_w"] = Tensor(_xavier(gen, feat, c, (feat, c)), requires_grad=True)
    params["assign_b"] = Tensor(np.zeros(c), requires_grad=True)
    gen = SplitMix64(derive(seed, "centers"))
    params["centers"] = Tensor(
        gen.normals(feat * c).reshape(feat, c) / np.sqrt(feat), requires_grad=True
    )
    gen = SplitMix64(derive(seed, "fc"))
    params["fc_w"] = Tensor(_xavier(gen, feat * c, hid, (feat * c, hid)), requires_grad=True)
    params["fc_b"] = Tensor(np.zeros(hid), requires_grad=True)
    gen = SplitMix64(derive(seed, "gate"))
    params["gate_w"] = Tensor(_xavier(gen, hid, hid, (hid, hid)), requires_grad=True)
    params["gate_b"] = Tensor(np.zeros(hid), requires_grad=True)
    return params


def init_head(width: int, num_classes: int, seed: int) -> dict:
    gen = SplitMix64(derive(seed, "head"))
    return {
        "head_w": Tensor(_xavier(gen, width, num_classes, (width, num_classes)),
                         requires_grad=True),
        "head_b": Tensor(np.zeros(num_classes), requires_grad=True),
    }


def _lstm_stack(g: Graph, x: Tensor, params: dict, prefix: str, rate: float,
                train: bool) -> Tensor:
    h1 = g.lstm(x, params[f"{prefix}1_w"], params[f"{prefix}1_b"])
    h1 = g.dropout(h1, rate, train)
    return g.lstm(h1, params[f"{prefix}2_w"], params[f"{prefix}2_b"])


def encode_hrnn(g: Graph, frames: Tensor, params: dict, cfg: HRNNConfig,
                train: bool = False) -> VideoEmbedding:
    t_len = frames.shape[0]
    if t_len < 1:
        raise ValueError("encode_hrnn: empty frame sequence")
    blocks = []
    for start in range(0, t_len, cfg.frames_per_block):
        stop = min(start + cfg.frames_per_block, t_len)
        block = g.slice(frames, start, stop, axis=0)
        hs = _lstm_stack(g, block, params, "lower", cfg.dropout, train)
        last = g.slice(hs, stop - start - 1, stop - start, axis=0)
        blocks.append(g.reshape(last, (cfg.cell,)))
    seq = g.stack_rows(blocks)
    hs = _lstm_stack(g, seq, params, "upper", cfg.dropout, train)
    last = g.slice(hs, len(blocks) - 1, len(blocks), axis=0)
    e = g.reshape(last, (cfg.cell,))
    return VideoEmbedding(e=e, intermediates=blocks)


def _vlad_aggregate(g: Graph, feats: Tensor, weights: Tensor, centers: Tensor) -> Tensor:
    """V[d, c] = sum_t weights[t, c] * (feats[t, d] - centers[d, c])."""
    wsum = g.sum(weights, axis=0)  # [C]
    return g.sub(g.matmul(g.transpose(feats), weights), g.mul(centers, wsum))


def _normalize_descriptor(g: Graph, v: Tensor) -> Tensor:
    """Per-cluster (column) L2 normalization, then global L2, flattened."""
    col_ss = g.sum(g.mul(v, v), axis=0, keepdims=True)  # [1, C]
    v = g.mul(v, g.rsqrt(col_ss, eps=1e-12))
    flat = g.reshape(v, (v.size,))
    total = g.sum(g.mul(flat, flat))
    return g.mul(flat, g.rsqrt(total, eps=1e-12))


def _fc_gate(g: Graph, x: Tensor, params: dict) -> Tensor:
    h = g.add(g.matmul(x, params["fc_w"]), params["fc_b"])
    gate = g.sigmoid(g.add(g.matmul(h, params["gate_w"]), params["gate_b"]))
    return g.mul(gate, h)


def netvlad_descriptor(g: Graph, frames: Tensor, params: dict) -> Tensor:
    """The un-normalized D x C residual descriptor (exposed for oracles)."""
    logits = g.add(g.matmul(frames, params["assign_w"]), params["assign_b"])
    assign = g.softmax(logits)  # [T, C]
    return _vlad_aggregate(g, frames, assign, params["centers"])


def encode_netvlad(g: Graph, frames: Tensor, params: dict, cfg: NetVLADConfig,
                   train: bool = False) -> VideoEmbedding:
    if frames.shape[0] < 1:
        raise ValueError("encode_netvlad: empty frame sequence")
    v = netvlad_descriptor(g, frames, params)
    e = _fc_gate(g, _normalize_descriptor(g, v), params)
    return VideoEmbedding(e=e)


def nextvlad_descriptor(g: Graph, frames: Tensor, params: dict,
                        cfg: NeXtVLADConfig) -> Tensor:
    """The un-normalized group_width x C descriptor (exposed for oracles)."""
    t_len = frames.shape[0]
    expanded = g.add(g.matmul(frames, params["expand_w"]), params["expand_b"])
    attn = g.sigmoid(g.add(g.matmul(expanded, params["attn_w"]), params["attn_b"]))
    grouped = g.reshape(expanded, (t_len * cfg.groups, cfg.group_width))
    logits = g.add(g.matmul(grouped, params["assign_w"]), params["assign_b"])
    assign = g.softmax(logits)  # [T*G, C]
    weights = g.mul(assign, g.reshape(attn, (t_len * cfg.groups, 1)))
    return _vlad_aggregate(g, grouped, weights, params["centers"])


def encode_nextvlad(g: Graph, frames: Tensor, params: dict, cfg: NeXtVLADConfig,
                    train: bool = False) -> VideoEmbedding:
    if frames.shape[0] < 1:
        raise ValueError("encode_nextvlad: empty frame sequence")
    v = nextvlad_descriptor(g, frames, params, cfg)
    flat = _normalize_descriptor(g, v)
    flat = g.dropout(flat, cfg.dropout, train)
    e = _fc_gate(g, flat, params)
    return VideoEmbedding(e=e)


def encode(g: Graph, frames: Tensor, params: dict, cfg: EncoderConfig,
           train: bool = False) -> VideoEmbedding:
    if isinstance(cfg, HRNNConfig):
        return encode_hrnn(g, frames, params, cfg, train)
    if isinstance(cfg, NetVLADConfig):
        return encode_netvlad(g, frames, params, cfg, train)
    return encode_nextvlad(g, frames, params, cfg, train)


def classify(g: Graph, emb: VideoEmbedding, params: dict) -> Tensor:
    """Per-class sigmoid probabilities (independent, multi-label)."""
    if emb.e.shape[-1] != params["head_w"].shape[0]:
        raise ValueError(
            f"classify: embedding width {emb.e.shape[-1]} != head width "
            f"{params['head_w'].shape[0]}"
        )
    return g.sigmoid(g.add(g.matmul(emb.e, params["head_w"]), params["head_b"]))


def forward_scores(cfg: EncoderConfig, params: dict, frames: np.ndarray) -> np.ndarray:
    """Eval-mode class probabilities for one video (no gradients)."""
    g = Graph()
    emb = encode(g, Tensor(frames), params, cfg, train=False)
    return classify(g, emb, params).data


def student_encoder_config(teacher_cfg: EncoderConfig, k: int,
                           n_frames: int) -> EncoderConfig:
    """Student config with equal embedding width; H-RNN block size is scaled
    so teacher and student block counts align (l_S = l_T * k / N)."""
    if not isinstance(teacher_cfg, HRNNConfig):
        return teacher_cfg
    l_s = max(1, round(teacher_cfg.frames_per_block * k / n_frames))
    return HRNNConfig(
        input_dim=teacher_cfg.input_dim,
        num_classes=teacher_cfg.num_classes,
        frames_per_block=l_s,
        cell=teacher_cfg.cell,
        dropout=teacher_cfg.dropout,
    )


_CKPT_MAGIC = b"FDM1"


def save_checkpoint(path, cfg: EncoderConfig, params: dict, history: list,
                    num_updates: int = 0) -> None:
    """Write an FDM1 checkpoint; parameters are stored sorted by name."""
    meta = {
        "encoder": config_to_dict(cfg),
        "history": history,
        "num_updates": num_updates,
    }
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(json.dumps(meta, separators=(",", ":"), sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for name in sorted(params):
            tensor = params[name]
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            dims = tensor.shape
            fh.write(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
            fh.write(tensor.data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read an FDM1 checkpoint -> (cfg, params, history, num_updates)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {_CKPT_MAGIC!r}")
    nl = blob.index(b"\n", 4)
    meta = json.loads(blob[4:nl].decode("utf-8"))
    cfg = config_from_dict(meta["encoder"])
    off = nl + 1
    params = {}
    while off < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(dims))
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(dims)
        off += 8 * count
        params[name] = Tensor(data.copy(), requires_grad=True)
    return cfg, params, meta["history"], meta["num_updates"]
