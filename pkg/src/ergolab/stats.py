"""Jump counts, q-variation, and upcrossing counts of finite scale sequences.

Everything in this module works on a finite family of real values indexed by
strictly increasing scales (radii).  The three functionals measured here are

* the lambda-jump count: the largest N such that some increasing subsequence
  r_0 < ... < r_N has every consecutive gap |a_{r_i} - a_{r_{i-1}}| > lambda,
* the q-variation: sup over partitions of (sum |successive difference|^q)^{1/q},
* the upcrossing count: maximal number of moves from below a to above b,
  in scale order.

Exhaustive reference implementations (`jump_count_oracle`,
`variation_oracle`) are kept alongside the fast ones; the test suite pins the
fast implementations to them on large random ensembles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "ScaleSequence",
    "jump_count",
    "jump_count_batch",
    "jump_count_oracle",
    "variation",
    "variation_batch",
    "variation_oracle",
    "upcrossing_count",
    "upcrossing_count_batch",
    "jump_functional",
    "default_lambda_grid",
]

_ORACLE_MAX_LEN = 20


@dataclass(frozen=True)
class ScaleSequence:
    """Real values attached to a strictly increasing finite set of radii."""

    radii: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.radii) != len(self.values):
            raise ValueError("radii and values must have equal length")
        r = np.asarray(self.radii, dtype=float)
        if r.size >= 2 and not np.all(np.diff(r) > 0):
            raise ValueError("radii must be strictly increasing")
        v = np.asarray(self.values, dtype=float)
        if v.size and not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "ScaleSequence":
        vals = tuple(float(v) for v in values)
        return cls(tuple(float(i + 1) for i in range(len(vals))), vals)

    def __len__(self) -> int:
        return len(self.values)


def _values_of(seq) -> np.ndarray:
    if isinstance(seq, ScaleSequence):
        return np.asarray(seq.values, dtype=float)
    return np.asarray(seq, dtype=float)


# ---------------------------------------------------------------------------
# oracles (exhaustive, independent of the fast implementations)
# ---------------------------------------------------------------------------

def jump_count_oracle(seq, lam: float) -> int:
    """Exhaustive maximum of (length - 1) over all increasing subsequences
    whose every consecutive gap exceeds ``lam``.

    Enumerates subsequences by bitmask; refuses sequences longer than 20
    (exponential cost).  This is the ground truth `jump_count` is tested
    against.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    a = _values_of(seq)
    n = a.size
    if n > _ORACLE_MAX_LEN:
        raise ValueError(f"oracle refuses length {n} > {_ORACLE_MAX_LEN}")
    best = 0
    for mask in range(1, 1 << n):
        prev = None
        gaps = 0
        ok = True
        for i in range(n):
            if not (mask >> i) & 1:
                continue
            if prev is not None:
                if abs(a[i] - prev) > lam:
                    gaps += 1
                else:
                    ok = False
                    break
            prev = a[i]
        if ok and gaps > best:
            best = gaps
    return best


def variation_oracle(seq, q: float) -> float:
    """Exhaustive q-variation: maximize sum |gap|^q over all partitions
    (subsequences), then take the 1/q power.  Refuses length > 16."""
    if not (q >= 1):
        raise ValueError("q must be >= 1")
    a = _values_of(seq)
    n = a.size
    if n > 16:
        raise ValueError(f"oracle refuses length {n} > 16")
    best = 0.0
    for mask in range(1, 1 << n):
        prev = None
        s = 0.0
        for i in range(n):
            if not (mask >> i) & 1:
                continue
            if prev is not None:
                s += abs(a[i] - prev) ** q
            prev = a[i]
        if s > best:
            best = s
    return best ** (1.0 / q)


# ---------------------------------------------------------------------------
# fast implementations
# ---------------------------------------------------------------------------

def jump_count(seq, lam: float) -> int:
    """Largest N admitting scales r_0 < ... < r_N with all gaps > ``lam``.

    Exact O(n^2) chain dynamic program: best[i] is the longest qualifying
    chain ending at index i.  (A single greedy pass, even restarted at every
    index, can undercount: taking an early jump may block two later ones.)
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    a = _values_of(seq)
    n = a.size
    if n == 0:
        return 0
    best = np.zeros(n, dtype=np.int64)
    for i in range(1, n):
        reach = np.abs(a[i] - a[:i]) > lam
        if reach.any():
            best[i] = best[:i][reach].max() + 1
    return int(best.max())


def jump_count_batch(values: np.ndarray, lam: float) -> np.ndarray:
    """`jump_count` down each column of a (scales x points) array."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 2:
        raise ValueError("expected a 2-d (scales x points) array")
    n, width = vals.shape
    out = np.zeros(width, dtype=np.int64)
    if n == 0:
        return out
    best = np.zeros((n, width), dtype=np.int64)
    for i in range(1, n):
        bi = best[i]
        vi = vals[i]
        for j in range(i):
            cand = np.where(np.abs(vi - vals[j]) > lam, best[j] + 1, 0)
            np.maximum(bi, cand, out=bi)
        np.maximum(out, bi, out=out)
    return out


def variation(seq, q: float) -> float:
    """q-variation for q >= 1 (or q = inf: the largest pairwise gap).

    Finite q uses the exact dynamic program
    best[i] = max_{j<i} (best[j] + |a_i - a_j|^q); the answer is
    (max_i best[i])^{1/q}.  q < 1 is unsupported (the partition supremum is
    still defined there but is not what this program computes).
    """
    a = _values_of(seq)
    n = a.size
    if n < 2:
        return 0.0
    if math.isinf(q):
        # sup over i < j only; running extremes suffice
        lo = np.minimum.accumulate(a)
        hi = np.maximum.accumulate(a)
        return float(max(np.max(a[1:] - lo[:-1]), np.max(hi[:-1] - a[1:]), 0.0))
    if not q >= 1:
        raise ValueError("q must be >= 1 or inf")
    best = np.zeros(n)
    for i in range(1, n):
        best[i] = np.max(best[:i] + np.abs(a[i] - a[:i]) ** q)
    return float(best.max() ** (1.0 / q))


def variation_batch(values: np.ndarray, q: float) -> np.ndarray:
    """`variation` down each column of a (scales x points) array (finite q)."""
    if not q >= 1:
        raise ValueError("q must be >= 1")
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 2:
        raise ValueError("expected a 2-d (scales x points) array")
    n, width = vals.shape
    if n < 2:
        return np.zeros(width)
    best = np.zeros((n, width))
    for i in range(1, n):
        bi = best[i]
        vi = vals[i]
        for j in range(i):
            cand = best[j] + np.abs(vi - vals[j]) ** q
            np.maximum(bi, cand, out=bi)
    return np.max(best, axis=0) ** (1.0 / q)


def upcrossing_count(seq, a: float, b: float) -> int:
    """Number of completed below-``a`` then above-``b`` transitions, in order.

    The single forward scan (seek value < a, then seek value > b, repeat)
    attains the supremum over subsequences.
    """
    if not b > a:
        raise ValueError("need b > a")
    vals = _values_of(seq)
    count = 0
    seeking_low = True
    for v in vals:
        if seeking_low:
            if v < a:
                seeking_low = False
        elif v > b:
            count += 1
            seeking_low = True
    return count


def upcrossing_count_batch(values: np.ndarray, a: float, b: float) -> np.ndarray:
    """`upcrossing_count` down each column of a (scales x points) array."""
    if not b > a:
        raise ValueError("need b > a")
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 2:
        raise ValueError("expected a 2-d (scales x points) array")
    n, width = vals.shape
    count = np.zeros(width, dtype=np.int64)
    seeking_low = np.ones(width, dtype=bool)
    for i in range(n):
        row = vals[i]
        went_low = seeking_low & (row < a)
        went_high = ~seeking_low & (row > b)
        count[went_high] += 1
        seeking_low = (seeking_low & ~went_low) | went_high
    return count


class JumpFunctional(NamedTuple):
    value: float
    lam: float


def jump_functional(seq, lam_grid, q: float = 2.0) -> JumpFunctional:
    """max over the grid of lam * N_lam^{1/q}, with its maximizing lambda.

    A finite grid under-approximates the supremum over lambda > 0; callers
    (and reports) should say which grid was used.
    """
    grid = np.asarray(lam_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid must be nonempty")
    if np.any(grid <= 0):
        raise ValueError("lambda grid must be positive")
    best = JumpFunctional(0.0, float(grid[0]))
    for lam in grid:
        n = jump_count(seq, float(lam))
        val = float(lam) * n ** (1.0 / q)
        if val > best.value:
            best = JumpFunctional(val, float(lam))
    return best


def default_lambda_grid(seq, count: int = 8) -> np.ndarray:
    """Log-spaced grid from the smallest positive gap to the full range.

    Empty when the sequence has no positive gaps (e.g. constants).
    """
    a = _values_of(seq)
    if a.size < 2:
        return np.empty(0)
    gaps = np.abs(np.diff(a))
    gaps = gaps[gaps > 0]
    if gaps.size == 0:
        return np.empty(0)
    lo = float(gaps.min())
    hi = float(a.max() - a.min())
    if hi <= lo:
        return np.array([lo])
    return np.geomspace(lo, hi, count)
