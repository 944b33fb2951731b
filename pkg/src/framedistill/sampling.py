"""Frame-index selection strategies.

Six ways of keeping k of N frames: equally spaced (uniform), random without
replacement, the first / middle / last k, and sme (start-middle-end thirds).
The uniform rule floor(i*N/k) reduces to exactly every j-th frame when
j = N/k is integral. Random indices are returned sorted so the recurrent
encoders still see frames in temporal order. When k >= N every strategy
returns all frames.
"""

from __future__ import annotations

from dataclasses import dataclass

from .rng import SplitMix64, derive

KINDS = ("uniform", "random", "first", "middle", "last", "sme")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str
    k: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}, want one of {KINDS}")
        if self.k < 1:
            raise ValueError(f"sampler k must be >= 1, got {self.k}")


def _block(kind: str, k: int, n: int) -> list[int]:
    if kind == "first":
        return list(range(k))
    if kind == "last":
        return list(range(n - k, n))
    if kind == "middle":
        start = (n - k) // 2
        return list(range(start, start + k))
    raise AssertionError(kind)


def sample_indices(spec: SamplerSpec, n: int) -> list[int]:
    """Strictly increasing frame indices in [0, n) chosen by the strategy."""
    if n < 1:
        raise ValueError(f"frame count must be >= 1, got {n}")
    k = spec.k
    if k >= n:
        return list(range(n))
    if spec.kind == "uniform":
        return [(i * n) // k for i in range(k)]
    if spec.kind in ("first", "middle", "last"):
        return _block(spec.kind, k, n)
    if spec.kind == "random":
        gen = SplitMix64(derive(spec.seed, "sample", n))
        return sorted(gen.sample_without_replacement(n, k))
    # sme: first ceil(k/3), middle floor(k/3), last k - ceil(k/3) - floor(k/3)
    k_first = -(-k // 3)
    k_mid = k // 3
    k_last = k - k_first - k_mid
    picked = _block("first", k_first, n)
    if k_mid:
        picked += _block("middle", k_mid, n)
    if k_last:
        picked += _block("last", k_last, n)
    out = []
    for idx in picked:
        if not out or idx > out[-1]:
            out.append(idx)
    return out
