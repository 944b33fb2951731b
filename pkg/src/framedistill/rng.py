"""Deterministic counter-based random numbers (SplitMix64).

Every random draw in this package flows through the generator defined here,
never through platform RNGs, so datasets, parameter inits, dropout masks and
shuffles are reproducible from integer seeds across runs and languages.

The generator is SplitMix64 used in counter mode. All arithmetic is unsigned
64-bit with wrap-around:

    GAMMA = 0x9E3779B97F4A7C15
    state(i) = seed + (i + 1) * GAMMA            # counter i = 0, 1, 2, ...
    mix(z):   z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
              z ^= z >> 27;  z *= 0x94D049BB133111EB
              z ^= z >> 31;  return z
    raw(i)   = mix(state(i))                     # the i-th 64-bit output

Derived quantities:

* uniform double in [0, 1):  (raw >> 11) * 2**-53
* standard normals: Box-Muller on consecutive uniform pairs, with the radial
  uniform mapped into (0, 1] as ((raw >> 11) + 1) * 2**-53; outputs are laid
  out as [r0*cos(t0), r0*sin(t0), r1*cos(t1), ...].
* integer below n:  (raw * n) >> 64  (multiply-shift, exact in Python ints)
* stream derivation: ``derive(seed, *keys)`` folds each key (int, or UTF-8
  bytes of a string taken in little-endian 8-byte chunks) into the state via
  ``s = mix(s ^ mix(k + GAMMA))``. Independent sub-streams (per record, per
  parameter, per op) are obtained this way rather than by counter-splitting.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 output function on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive(seed: int, *keys) -> int:
    """Derive an independent stream seed from a base seed and a key path."""
    s = seed & MASK64
    for key in keys:
        if isinstance(key, str):
            raw = key.encode("utf-8")
            chunks = [
                int.from_bytes(raw[i : i + 8], "little") for i in range(0, len(raw), 8)
            ] or [0]
        else:
            chunks = [int(key) & MASK64]
        for c in chunks:
            s = mix64(s ^ mix64((c + GAMMA) & MASK64))
    return s


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Stateful view over the counter sequence of one stream."""

    def __init__(self, seed: int):
        self._seed = seed & MASK64
        self._counter = 0

    def _raw_block(self, n: int) -> np.ndarray:
        """The next n raw 64-bit outputs, vectorized."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self._seed) + idx * np.uint64(GAMMA)
            return _mix64_vec(state)

    def next_raw(self) -> int:
        self._counter += 1
        return mix64((self._seed + self._counter * GAMMA) & MASK64)

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (self.next_raw() >> 11) * 2.0**-53

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return (self._raw_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller on uniform pairs."""
        pairs = (n + 1) // 2
        raw = self._raw_block(2 * pairs)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def below(self, n: int) -> int:
        """One integer in [0, n) by multiply-shift."""
        if n <= 0:
            raise ValueError("below: bound must be positive")
        return (self.next_raw() * n) >> 64

    def randint(self, lo: int, hi: int) -> int:
        """One integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError(f"randint: empty range [{lo}, {hi}]")
        return lo + self.below(hi - lo + 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct values from range(n), in draw order (partial Fisher-Yates)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct values from range({n})")
        pool = list(range(n))
        out = []
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
            out.append(pool[i])
        return out
