"""Deterministic random streams built on splitmix64 and xoshiro256**.

Every stochastic choice in the workbench (weight init, epoch shuffling,
perturbation-direction sampling, search-order sampling) draws from a named
substream so that runs are reproducible from (seed, name) alone, independent
of call order elsewhere in the program.

Stream layout: a substream is a bank of ``lanes`` independent xoshiro256**
generators. Lane ``l`` of substream ``name`` under root ``seed`` is seeded by
filling its four state words from splitmix64 initialised with
``mix64(seed ^ fnv1a64(name)) + l``.  Blocks of draws are read lane-major
(one step of all lanes, then the next step), which keeps block generation
vectorised without changing results across block sizes.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def mix64(x: int) -> int:
    """splitmix64 output function (finalizer), one round."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def splitmix64_sequence(seed: int, count: int) -> list[int]:
    """First ``count`` outputs of splitmix64 starting from ``seed``."""
    out = []
    state = seed & _MASK64
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return out


def derive_seed(root: int, *parts: object) -> int:
    """Stable 64-bit seed derived from a root seed and labelling parts.

    Used for per-edge training seeds in path search, so that two procedures
    evaluating the same edge observe the same trained outcome.
    """
    h = mix64(root & _MASK64)
    for part in parts:
        h = mix64(h ^ fnv1a64(str(part).encode("utf-8")))
    return h


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class RandomStream:
    """A named, seeded substream of uniform/normal deviates.

    Deterministic given (seed, name, lanes); the default lane count is part
    of the reproducibility contract and should not be changed casually.
    """

    LANES = 64

    def __init__(self, seed: int, name: str, lanes: int = LANES):
        if lanes < 1:
            raise ValueError("lanes must be >= 1")
        self.seed = seed & _MASK64
        self.name = name
        self.lanes = lanes
        base = mix64(self.seed ^ fnv1a64(name.encode("utf-8")))
        states = []
        for lane in range(lanes):
            states.append(splitmix64_sequence((base + lane) & _MASK64, 4))
        arr = np.array(states, dtype=np.uint64)  # (lanes, 4)
        self._s0 = arr[:, 0].copy()
        self._s1 = arr[:, 1].copy()
        self._s2 = arr[:, 2].copy()
        self._s3 = arr[:, 3].copy()

    def _step(self) -> np.ndarray:
        """One xoshiro256** step of every lane; returns (lanes,) uint64."""
        result = _rotl(self._s1 * np.uint64(5), 7) * np.uint64(9)
        t = self._s1 << np.uint64(17)
        self._s2 ^= self._s0
        self._s3 ^= self._s1
        self._s1 ^= self._s2
        self._s0 ^= self._s3
        self._s2 ^= t
        self._s3 = _rotl(self._s3, 45)
        return result

    def uint64(self, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be >= 0")
        if count == 0:
            return np.empty(0, dtype=np.uint64)
        steps = -(-count // self.lanes)
        block = np.empty((steps, self.lanes), dtype=np.uint64)
        for i in range(steps):
            block[i] = self._step()
        return block.reshape(-1)[:count]

    def uniform(self, count: int) -> np.ndarray:
        """Uniform float64 in [0, 1): top 53 bits of each word."""
        bits = self.uint64(count)
        return (bits >> np.uint64(11)).astype(np.float64) * (2.0**-53)

    def normal(self, count: int, std: float = 1.0) -> np.ndarray:
        """Standard Gaussians via Box-Muller on consecutive uniform pairs."""
        pairs = -(-count // 2)
        u = self.uniform(2 * pairs)
        u1 = u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:count] * std

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by stable argsort of keys."""
        keys = self.uniform(n)
        return np.argsort(keys, kind="stable")

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """First k entries of a random permutation of range(n)."""
        if k > n:
            raise ValueError(f"cannot sample {k} of {n} without replacement")
        return self.permutation(n)[:k]
