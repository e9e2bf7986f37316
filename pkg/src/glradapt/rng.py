"""Counter-based pseudo-random numbers shared by every simulation backend.

The Monte Carlo kernels exist in multiple flavours (scalar python,
vectorised numpy, numba-jitted) and all of them must draw from the same
streams so that results are reproducible regardless of which backend the
environment selects.  numpy's Generator objects cannot be called from
nopython code, so the package carries its own generator: splitmix64
evaluated in counter mode.

A stream is identified by (seed, stream_id).  Draw k of a stream is

    u64(key, k) = fmix64(key + (k + 1) * GOLDEN)

which equals the k-th output of a splitmix64 generator seeded with ``key``.
Gaussians use one Box-Muller cosine per draw (two uniforms at counters
2j and 2j+1), keeping every variate independently addressable.

Integer and uniform draws are bit-identical across backends (pure integer
mixing plus one exact scale).  Gaussian draws may differ between backends in
the final ulp: numpy's vectorised log is not the same correctly-rounded
routine as libm's, so the Box-Muller transform of identical uniforms can
round differently.  The backend-equivalence tests therefore assert exact
equality of everything integer-valued (stage sizes, counts) and tight float
agreement elsewhere.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 2^-53: uniforms live on [2^-53, 1) so log(u) is always finite
_U53 = 2.0 ** -53


def fmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    """Derive the splitmix64 state for one logical stream.

    Two mixing rounds decorrelate (seed, stream) pairs that differ in a
    single bit.
    """
    return fmix64((fmix64(seed & MASK64) ^ ((stream * GOLDEN) & MASK64)) & MASK64)


def u64(key: int, counter: int) -> int:
    return fmix64((key + ((counter + 1) * GOLDEN)) & MASK64)


def uniform(key: int, counter: int) -> float:
    u = (u64(key, counter) >> 11) * _U53
    return u if u > 0.0 else _U53


def gaussian(key: int, index: int) -> float:
    """Standard normal draw number ``index`` of the stream."""
    u1 = uniform(key, 2 * index)
    u2 = uniform(key, 2 * index + 1)
    return float(np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2))


# ---------------------------------------------------------------------------
# Vectorised counterparts (bit-identical to the scalar path).


def u64_array(key: int, counters: np.ndarray) -> np.ndarray:
    z = (np.uint64(key) + (counters.astype(np.uint64) + np.uint64(1)) * np.uint64(GOLDEN))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def uniform_array(key: int, counters: np.ndarray) -> np.ndarray:
    u = (u64_array(key, counters) >> np.uint64(11)).astype(np.float64) * _U53
    return np.maximum(u, _U53)


def gaussian_array(key: int, indices: np.ndarray) -> np.ndarray:
    idx = indices.astype(np.uint64)
    u1 = uniform_array(key, idx * np.uint64(2))
    u2 = uniform_array(key, idx * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _flat_indices(base: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand ragged segments to flat draw indices and segment ids."""
    offsets = np.repeat(base.astype(np.uint64), counts)
    total = int(counts.sum())
    steps = np.arange(total, dtype=np.uint64)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.uint64)
    steps -= np.repeat(starts, counts)
    seg = np.repeat(np.arange(len(counts)), counts)
    return offsets + steps, seg


def bernoulli_sum_array(key: int, base: np.ndarray, counts: np.ndarray, p: float) -> np.ndarray:
    """Sum of ``counts[i]`` Bernoulli(p) draws at counters base[i]..base[i]+counts[i]-1.

    Ragged, so done with a flat index expansion; counts may be zero.
    """
    counts = counts.astype(np.int64)
    out = np.zeros(len(counts), dtype=np.int64)
    if int(counts.sum()) == 0:
        return out
    idx, seg = _flat_indices(base, counts)
    hits = uniform_array(key, idx) < p
    np.add.at(out, seg, hits.astype(np.int64))
    return out


def gaussian_segment_sums(key: int, base: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment Σz and Σz² over unit gaussians at indices base[i]..base[i]+counts[i]-1.

    Accumulation runs in unit order within each segment, matching a scalar
    loop's partial-sum order.
    """
    counts = counts.astype(np.int64)
    reps = len(counts)
    if int(counts.sum()) == 0:
        return np.zeros(reps), np.zeros(reps)
    idx, seg = _flat_indices(base, counts)
    z = gaussian_array(key, idx)
    return (np.bincount(seg, weights=z, minlength=reps),
            np.bincount(seg, weights=z * z, minlength=reps))
