"""Finite metric measure spaces: Cayley-ball truncations, finite quotients,
and explicit-matrix spaces, plus the geometric diagnostics (growth exponent,
annular decay, geometric doubling) used by the rest of the package.

Two ways to make an infinite group finite at desk scale:

* truncation: enumerate the Cayley ball B_R and use the metric of the induced
  subgraph; statistics are trustworthy only up to the safe radius R/4,
* quotient: reduce mod N; the quotient word metric is globally defined and
  balls of radius <= N/4 are isometric to the infinite-group balls.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "FinGroup",
    "FiniteSpace",
    "MatrixSpace",
    "GroupSpace",
    "BallTable",
    "GrowthProfile",
    "AnnularReport",
    "DoublingReport",
    "build_group_space",
    "random_square_space",
    "annular_decay_profile",
    "geometric_doubling_check",
    "fit_growth_exponent",
    "word_metric_constants",
    "growth_profile",
    "space_to_json",
    "space_from_json",
    "save_space",
    "load_space",
]

_MAX_POINTS = 300_000          # hard cap on enumerated group elements
_MAX_MATRIX = 4096             # largest space for which a full matrix is allowed


class CapacityError(ValueError):
    """Requested extent exceeds what fits in the 64-bit element encoding."""


# ---------------------------------------------------------------------------
# groups
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FinGroup:
    """A group from one of the supported families, with exact integer
    arithmetic on coordinate tuples.

    family "zd": Z^d (abelian), coordinates added componentwise.
    family "h3": discrete Heisenberg group on triples,
        (x,y,z)(x',y',z') = (x+x', y+y', z+z'+x*y').
    ``modulus`` reduces every coordinate mod N (finite quotient).
    """

    family: str
    d: int
    modulus: int | None = None

    def __post_init__(self) -> None:
        if self.family not in ("zd", "h3"):
            raise ValueError(f"unknown group family {self.family!r}")
        if self.family == "h3" and self.d != 3:
            raise ValueError("h3 uses exactly 3 coordinates")
        if self.d < 1:
            raise ValueError("need at least one coordinate")
        if self.modulus is not None and self.modulus < 4:
            raise ValueError("quotient modulus must be >= 4")

    @property
    def identity(self) -> np.ndarray:
        return np.zeros(self.d, dtype=np.int64)

    def standard_generators(self) -> np.ndarray:
        if self.family == "zd":
            eye = np.eye(self.d, dtype=np.int64)
            gens = np.concatenate([eye, -eye], axis=0)
        else:
            gens = np.array(
                [[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]], dtype=np.int64
            )
        return self._reduce(gens)

    def _reduce(self, arr: np.ndarray) -> np.ndarray:
        if self.modulus is not None:
            return np.mod(arr, self.modulus)
        return arr

    def mult(self, a, b) -> np.ndarray:
        """a * b, broadcasting over leading axes of either argument."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if self.family == "zd":
            return self._reduce(a + b)
        x = a[..., 0] + b[..., 0]
        y = a[..., 1] + b[..., 1]
        z = a[..., 2] + b[..., 2] + a[..., 0] * b[..., 1]
        out = np.stack(np.broadcast_arrays(x, y, z), axis=-1)
        return self._reduce(out)

    def inv(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        if self.family == "zd":
            return self._reduce(-a)
        out = np.stack(
            [-a[..., 0], -a[..., 1], -a[..., 2] + a[..., 0] * a[..., 1]],
            axis=-1,
        )
        return self._reduce(out)


def _check_generators(group: FinGroup, gens: np.ndarray) -> np.ndarray:
    gens = np.asarray(gens, dtype=np.int64)
    if gens.ndim != 2 or gens.shape[1] != group.d:
        raise ValueError("generators must be rows of group coordinates")
    gens = group._reduce(gens)
    rows = {tuple(int(v) for v in row) for row in gens}
    ident = tuple(int(v) for v in group.identity)
    if ident in rows:
        raise ValueError("identity must not be a generator")
    for row in gens:
        inv = tuple(int(v) for v in group.inv(row))
        if inv not in rows:
            raise ValueError(
                f"generator set is not symmetric: inverse of {tuple(row)} missing"
            )
    return gens


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------

class FiniteSpace:
    """Base class: indexed points, a metric through `dist_row`, and weights."""

    def __init__(self, n: int, weights, r0: float, label: str) -> None:
        if n < 1:
            raise ValueError("space needs at least one point")
        if weights is None:
            weights = np.ones(n)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n,):
            raise ValueError("weights must be one per point")
        if not np.all(weights > 0):
            raise ValueError("weights must be positive")
        if not r0 > 0:
            raise ValueError("r0 must be positive")
        self.n = n
        self.weights = weights
        self.r0 = float(r0)
        self.label = label
        self._matrix: np.ndarray | None = None

    # subclasses implement _dist_row
    def _dist_row(self, i: int) -> np.ndarray:
        raise NotImplementedError

    def dist_row(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexError(f"point {i} out of range")
        return self._dist_row(i)

    def dist(self, i: int, j: int) -> float:
        return float(self.dist_row(i)[j])

    def ball(self, i: int, r: float) -> np.ndarray:
        """Indices of the closed ball B(i, r)."""
        return np.nonzero(self.dist_row(i) <= r)[0]

    def ball_volume(self, i: int, r: float) -> float:
        return float(self.weights[self.dist_row(i) <= r].sum())

    def ball_table(self, center: int, radii: Sequence[int] | None = None) -> "BallTable":
        return BallTable.from_space(self, center, radii)

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def diameter(self) -> float:
        raise NotImplementedError

    def resolution(self) -> float:
        """Smallest positive distance (scales below it are degenerate)."""
        raise NotImplementedError

    @property
    def safe_radius(self) -> float:
        """Largest radius at which statistics are free of truncation or
        wrap-around contamination."""
        return self.diameter()

    @property
    def has_group_fastpath(self) -> bool:
        return False

    def dist_matrix(self) -> np.ndarray:
        if self.n > _MAX_MATRIX:
            raise CapacityError(
                f"refusing to materialize a {self.n}x{self.n} distance matrix"
            )
        if self._matrix is None:
            m = np.empty((self.n, self.n))
            for i in range(self.n):
                m[i] = self.dist_row(i)
            self._matrix = m
        return self._matrix


class MatrixSpace(FiniteSpace):
    """A space given by an explicit distance matrix (at most 4096 points)."""

    def __init__(self, matrix, weights=None, r0: float = 1.0,
                 label: str = "matrix", provenance: dict | None = None) -> None:
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("distance matrix must be square")
        n = matrix.shape[0]
        if n > _MAX_MATRIX:
            raise CapacityError(f"matrix spaces are capped at {_MAX_MATRIX} points")
        if not np.allclose(np.diag(matrix), 0.0):
            raise ValueError("diagonal must be zero")
        if not np.array_equal(matrix, matrix.T):
            raise ValueError("distance matrix must be symmetric")
        if np.any(matrix < 0):
            raise ValueError("distances must be nonnegative")
        super().__init__(n, weights, r0, label)
        self._matrix = matrix
        self.provenance = provenance or {}

    def _dist_row(self, i: int) -> np.ndarray:
        return self._matrix[i]

    def diameter(self) -> float:
        return float(self._matrix.max())

    def resolution(self) -> float:
        pos = self._matrix[self._matrix > 0]
        return float(pos.min()) if pos.size else 1.0

    def triangle_check(self, rng=None, samples: int = 2000) -> bool:
        rng = np.random.default_rng(0) if rng is None else rng
        m = self._matrix
        idx = rng.integers(0, self.n, size=(samples, 3))
        i, j, k = idx.T
        return bool(np.all(m[i, k] <= m[i, j] + m[j, k] + 1e-9))


class GroupSpace(FiniteSpace):
    """Points of a group family — a full finite quotient or a truncated
    Cayley ball — under the word metric, enumerated in a canonical order
    (word length, then lexicographic coordinates)."""

    def __init__(self, group: FinGroup, elements: np.ndarray, wl: np.ndarray,
                 radius: int | None, standard_gens: bool,
                 weights=None, r0: float = 1.0, label: str = "group") -> None:
        super().__init__(elements.shape[0], weights, r0, label)
        self.group = group
        self.elements = elements
        self.word_lengths = wl
        self.radius = radius            # truncation radius, None for quotients
        self._standard_gens = standard_gens
        self._keys = self._encode(elements)
        self._key_order = np.argsort(self._keys)
        self._sorted_keys = self._keys[self._key_order]
        if np.any(np.diff(self._sorted_keys) == 0):
            raise ValueError("duplicate elements in enumeration")
        self._row_cache: dict[int, np.ndarray] = {}
        self._perm_cache: dict[int, np.ndarray] = {}
        self._neighbors: np.ndarray | None = None
        self._gens = group.standard_generators() if standard_gens else None

    # -- element encoding ---------------------------------------------------
    def _ranges(self) -> tuple[np.ndarray, np.ndarray]:
        """(low, size) per coordinate for the mixed-radix key."""
        g = self.group
        if g.modulus is not None:
            low = np.zeros(g.d, dtype=np.int64)
            size = np.full(g.d, g.modulus, dtype=np.int64)
        elif g.family == "zd":
            r = self.radius
            low = np.full(g.d, -r, dtype=np.int64)
            size = np.full(g.d, 2 * r + 1, dtype=np.int64)
        else:
            r = self.radius
            zmax = r * r + r + 1
            low = np.array([-r, -r, -zmax], dtype=np.int64)
            size = np.array([2 * r + 1, 2 * r + 1, 2 * zmax + 1], dtype=np.int64)
        if int(np.prod(size.astype(object))) > 2**62:
            raise CapacityError("element encoding exceeds 64-bit range")
        return low, size

    def _encode(self, elems: np.ndarray) -> np.ndarray:
        low, size = self._ranges()
        shifted = elems - low
        keys = np.zeros(elems.shape[0], dtype=np.int64)
        for c in range(self.group.d):
            keys = keys * size[c] + shifted[:, c]
        return keys

    def index_of(self, elems: np.ndarray) -> np.ndarray:
        """Indices of the given coordinate rows; -1 where not enumerated."""
        elems = np.atleast_2d(np.asarray(elems, dtype=np.int64))
        low, size = self._ranges()
        shifted = elems - low
        in_range = np.all((shifted >= 0) & (shifted < size), axis=1)
        safe = np.where(in_range[:, None], shifted, 0)
        keys = np.zeros(elems.shape[0], dtype=np.int64)
        for c in range(self.group.d):
            keys = keys * size[c] + safe[:, c]
        pos = np.searchsorted(self._sorted_keys, keys)
        pos = np.clip(pos, 0, self.n - 1)
        hit = in_range & (self._sorted_keys[pos] == keys)
        out = np.where(hit, self._key_order[pos], -1)
        return out

    # -- metric ---------------------------------------------------------------
    @property
    def is_quotient(self) -> bool:
        return self.group.modulus is not None

    def _dist_row(self, i: int) -> np.ndarray:
        if self.is_quotient:
            # d(x, y) = |x^{-1} y| by left invariance
            prods = self.group.mult(self.group.inv(self.elements[i]), self.elements)
            return self.word_lengths[self.index_of(prods)].astype(float)
        if self.group.family == "zd" and self._standard_gens:
            # the l^1 formula is exact on truncated diamonds: a monotone
            # path that shrinks coordinates before growing them stays inside
            return np.abs(self.elements - self.elements[i]).sum(axis=1).astype(float)
        if i not in self._row_cache:
            self._row_cache[i] = self._bfs_row(i)
        return self._row_cache[i]

    def _neighbor_table(self) -> np.ndarray:
        if self._neighbors is None:
            gens = self._gens
            if gens is None:
                raise ValueError("truncated space with custom generators "
                                 "requires explicit neighbor construction")
            cols = [self.index_of(self.group.mult(self.elements, g)) for g in gens]
            self._neighbors = np.stack(cols, axis=1)
        return self._neighbors

    def _bfs_row(self, i: int) -> np.ndarray:
        nbrs = self._neighbor_table()
        dist = np.full(self.n, -1, dtype=np.int64)
        dist[i] = 0
        frontier = np.array([i])
        d = 0
        while frontier.size:
            d += 1
            cand = nbrs[frontier].ravel()
            cand = cand[cand >= 0]
            cand = cand[dist[cand] < 0]
            if cand.size == 0:
                break
            frontier = np.unique(cand)
            dist[frontier] = d
        if np.any(dist < 0):
            raise ValueError("truncated ball is not connected (BFS gap)")
        return dist.astype(float)

    def diameter(self) -> float:
        if self.is_quotient:
            return float(self.word_lengths.max())
        # exact for truncations of both families: 2R is attained along a
        # single generator axis and never exceeded (geodesics via identity)
        return float(2 * self.radius)

    def resolution(self) -> float:
        return 1.0

    @property
    def safe_radius(self) -> float:
        if self.is_quotient:
            return float(self.group.modulus // 4)
        return float(max(1, self.radius // 4))

    @property
    def has_group_fastpath(self) -> bool:
        return self.is_quotient

    # -- translation machinery for the averaging operators ---------------------
    def shell_slice(self, r: int) -> slice:
        """Canonical-order slice of the sphere {|u| = r}."""
        lo = int(np.searchsorted(self.word_lengths, r, side="left"))
        hi = int(np.searchsorted(self.word_lengths, r, side="right"))
        return slice(lo, hi)

    def right_perm(self, j: int) -> np.ndarray:
        """Permutation i -> index(x_i * u_j) (quotients only)."""
        if not self.is_quotient:
            raise ValueError("right translations are total only on quotients")
        if j not in self._perm_cache:
            perm = self.index_of(self.group.mult(self.elements, self.elements[j]))
            if np.any(perm < 0):
                raise ValueError("translation left the space")
            # int32 halves the cache; n is far below the int32 range
            self._perm_cache[j] = perm.astype(np.int32)
        return self._perm_cache[j]


# ---------------------------------------------------------------------------
# ball tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BallTable:
    """Closed balls around one center at an increasing list of radii."""

    center: int
    radii: tuple[int, ...]
    _order: np.ndarray = field(repr=False)
    _dists: np.ndarray = field(repr=False)
    _cum_weight: np.ndarray = field(repr=False)

    @classmethod
    def from_space(cls, space: FiniteSpace, center: int,
                   radii: Sequence[int] | None = None) -> "BallTable":
        row = space.dist_row(center)
        order = np.argsort(row, kind="stable")
        dists = row[order]
        cumw = np.cumsum(space.weights[order])
        if radii is None:
            radii = range(int(math.ceil(dists[-1])) + 1)
        radii = tuple(int(r) for r in radii)
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly increasing")
        return cls(center, radii, order, dists, cumw)

    def _cut(self, r: float) -> int:
        return int(np.searchsorted(self._dists, r, side="right"))

    def members(self, r: float) -> np.ndarray:
        return self._order[: self._cut(r)]

    def volume(self, r: float) -> float:
        k = self._cut(r)
        return float(self._cum_weight[k - 1]) if k else 0.0

    @property
    def volumes(self) -> np.ndarray:
        return np.array([self.volume(r) for r in self.radii])


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _bfs_enumerate(group: FinGroup, gens: np.ndarray,
                   radius: int | None) -> tuple[np.ndarray, np.ndarray]:
    """Breadth-first enumeration from the identity; returns (elements, word
    lengths) in canonical order."""
    gen_tuples = [tuple(int(v) for v in g) for g in gens]
    start = tuple(int(v) for v in group.identity)
    seen: dict[tuple, int] = {start: 0}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        d = seen[cur]
        if radius is not None and d >= radius:
            continue
        cur_arr = np.array(cur, dtype=np.int64)
        for g in gen_tuples:
            nxt = tuple(int(v) for v in group.mult(cur_arr, np.array(g, dtype=np.int64)))
            if nxt not in seen:
                if len(seen) >= _MAX_POINTS:
                    raise CapacityError(
                        f"enumeration exceeded {_MAX_POINTS} elements"
                    )
                seen[nxt] = d + 1
                queue.append(nxt)
    elems = np.array(list(seen.keys()), dtype=np.int64)
    wl = np.array(list(seen.values()), dtype=np.int64)
    # canonical order: word length, then coordinates lexicographically
    keys = tuple(elems[:, c] for c in reversed(range(group.d))) + (wl,)
    order = np.lexsort(keys)
    return elems[order], wl[order]


def build_group_space(family: str, *, d: int | None = None,
                      radius: int | None = None, modulus: int | None = None,
                      generators=None, r0: float = 1.0, weights=None,
                      label: str | None = None) -> tuple[GroupSpace, BallTable]:
    """Enumerate a group-family space and its identity-centered ball table.

    family "zd" needs ``d``; family "h3" is the discrete Heisenberg group.
    Exactly one of ``radius`` (Cayley-ball truncation) and ``modulus``
    (finite quotient) must be given.
    """
    if family not in ("zd", "h3"):
        raise ValueError(f"unknown family {family!r} (use 'zd' or 'h3')")
    if (radius is None) == (modulus is None):
        raise ValueError("give exactly one of radius= (truncation) or "
                         "modulus= (quotient)")
    if family == "zd":
        if d is None:
            raise ValueError("family 'zd' requires d=")
        dim = int(d)
    else:
        if d not in (None, 3):
            raise ValueError("family 'h3' has fixed dimension 3")
        dim = 3
    if radius is not None and radius < 1:
        raise ValueError("truncation radius must be >= 1")
    if modulus is not None and modulus < 4:
        raise ValueError("quotient modulus must be >= 4")
    if radius is not None:
        if family == "zd" and (2 * radius + 1) ** dim > _MAX_POINTS:
            raise CapacityError("truncated ball has too many points")
        if family == "h3" and radius > 64:
            raise CapacityError("h3 truncations are capped at radius 64")
    if modulus is not None and modulus ** dim > _MAX_POINTS:
        raise CapacityError("quotient has too many points")

    group = FinGroup(family, dim, modulus)
    standard = generators is None
    gens = group.standard_generators() if standard else _check_generators(group, generators)

    elems, wl = _bfs_enumerate(group, gens, radius)
    if modulus is not None and elems.shape[0] != modulus ** dim:
        raise ValueError(
            f"generators do not generate the quotient: reached "
            f"{elems.shape[0]} of {modulus ** dim} elements"
        )
    if label is None:
        if family == "zd":
            base = f"Z^{dim}"
        else:
            base = "H3"
        label = f"{base} mod {modulus}" if modulus else f"{base} ball R={radius}"
    space = GroupSpace(group, elems, wl, radius, standard,
                       weights=weights, r0=r0, label=label)
    table = BallTable.from_space(space, int(np.nonzero(wl == 0)[0][0]))
    return space, table


def random_square_space(n: int, side: int, seed: int, r0: float = 1.0) -> MatrixSpace:
    """n distinct points of an integer square grid under the l^1 metric."""
    if n > side * side:
        raise ValueError("grid too small for that many points")
    rng = np.random.default_rng(seed)
    flat = rng.choice(side * side, size=n, replace=False)
    pts = np.stack([flat // side, flat % side], axis=1).astype(np.int64)
    diff = np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=2)
    return MatrixSpace(diff.astype(float), r0=r0,
                       label=f"random-square n={n} side={side}",
                       provenance={"builder": "random_square_space",
                                   "n": n, "side": side, "seed": seed})


# ---------------------------------------------------------------------------
# growth diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthProfile:
    """Fitted geometric constants of a space."""

    D_G: float
    C_V: float
    eps: float
    K: float
    K_eps: float
    D0: int

    def __post_init__(self) -> None:
        if not self.D_G > 0:
            raise ValueError("growth exponent must be positive")
        if not self.C_V >= 1:
            raise ValueError("volume constant must be >= 1")
        if not 0 < self.eps <= 1:
            raise ValueError("annular exponent must lie in (0, 1]")
        if not self.K > 0:
            raise ValueError("annular constant must be positive")


@dataclass(frozen=True)
class AnnularReport:
    """Result of scanning m(B(x, r+s)) - m(B(x, r)) against K (s/r)^eps m(B(x, r))."""

    eps: float
    K_hat: float
    K_eps_formula: float      # (2^eps + 1) K_hat + 2^eps
    K_eps_measured: float     # minimal two-sided constant over the sample
    two_sided_ok: bool
    n_samples: int
    worst: tuple[int, float, float] | None   # (center, r, s) attaining K_hat


def annular_decay_profile(space: FiniteSpace, centers: Iterable[int],
                          r_values: Iterable[float], s_values: Iterable[float],
                          eps: float = 1.0) -> AnnularReport:
    """Minimal one-sided annular constant K over the sampled (center, r, s),
    plus the measured two-sided constant compared with (2^eps+1)K + 2^eps.

    The one-sided scan silently includes the shifted pairs (r-s, s) whenever
    s < r/2, which makes the two-sided comparison self-contained: the
    two-sided measurement then can never exceed the formula value.
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    centers = list(centers)
    if not centers:
        raise ValueError("need at least one sample center")
    r_values = sorted(set(float(r) for r in r_values))
    s_values = sorted(set(float(s) for s in s_values))
    if not r_values or not s_values:
        raise ValueError("need at least one radius and one width")
    half_diam = space.diameter() / 2
    for r in r_values:
        if not (space.r0 < r <= half_diam):
            raise ValueError(
                f"radius {r} outside the valid range ({space.r0}, {half_diam}]"
            )

    K_hat = 0.0
    K2 = 0.0
    worst = None
    n_samples = 0
    for c in centers:
        raw = space.dist_row(c)
        order = np.argsort(raw, kind="stable")
        row = raw[order]
        cumw = np.cumsum(space.weights[order])

        def vol(r: float) -> float:
            k = int(np.searchsorted(row, r, side="right"))
            return float(cumw[k - 1]) if k else 0.0

        for r in r_values:
            vr = vol(r)
            for s in s_values:
                if s > r or s < 0:
                    continue
                n_samples += 1
                if s > 0:
                    ratio = (vol(r + s) - vr) / ((s / r) ** eps * vr)
                    if ratio > K_hat:
                        K_hat = ratio
                        worst = (c, r, s)
                    if s < r / 2 and r - s > space.r0:
                        # shifted pair used by the two-sided argument
                        vrs = vol(r - s)
                        shifted = (vr - vrs) / ((s / (r - s)) ** eps * vrs)
                        K_hat = max(K_hat, shifted)
                if r >= 2 * space.r0 and s > 0:
                    two = (vol(r + s) - vol(r - s)) / ((s / r) ** eps * vr)
                    K2 = max(K2, two)
    if n_samples == 0:
        raise ValueError("no valid (r, s) pairs in the sample")
    formula = (2**eps + 1) * K_hat + 2**eps
    return AnnularReport(eps=eps, K_hat=K_hat, K_eps_formula=formula,
                         K_eps_measured=K2,
                         two_sided_ok=bool(K2 <= formula + 1e-12),
                         n_samples=n_samples, worst=worst)


@dataclass(frozen=True)
class CoverCheck:
    R: float
    r: float
    count: int
    bound: float
    ok: bool


@dataclass(frozen=True)
class DoublingReport:
    D0: int
    max_small_cover: int
    small_ok: bool
    D: float
    pairs: tuple[CoverCheck, ...]

    @property
    def all_ok(self) -> bool:
        return self.small_ok and all(p.ok for p in self.pairs)


def _greedy_net(space: FiniteSpace, members: np.ndarray, sep: float) -> list[int]:
    """Maximal strictly-sep-separated subset, scanning members in ascending
    index.  Maximality means every rejected point lies within sep (closed) of
    a kept one, so closed sep-balls around the net cover the member set."""
    members = np.sort(members)
    kept: list[int] = []
    min_dist = np.full(space.n, np.inf)
    for p in members:
        if min_dist[p] > sep:
            kept.append(int(p))
            np.minimum(min_dist, space.dist_row(p), out=min_dist)
    return kept


def geometric_doubling_check(space: FiniteSpace, D0: int,
                             r0: float | None = None,
                             centers: Iterable[int] | None = None,
                             small_radii: Iterable[float] | None = None,
                             pairs: Iterable[tuple[float, float]] | None = None,
                             eps: float = 1.0, K: float = 1.0) -> DoublingReport:
    """Greedy-cover probe of the doubling hypothesis.

    For sampled balls with r <= 4 r0, builds a greedy (r/2)-net of B(c, r)
    (whose r/2-balls cover the ball) and reports the largest net size; each
    requested (R, r) pair is checked against D^(log2 [R/r] + 1) with
    D = max(D0, [9^eps (K+1)] + 1).  Violations are reported, not raised.
    """
    if D0 < 1:
        raise ValueError("D0 must be >= 1")
    r0 = space.r0 if r0 is None else float(r0)
    if centers is None:
        step = max(1, space.n // 8)
        centers = range(0, space.n, step)
    centers = list(centers)
    if small_radii is None:
        small_radii = [r for r in (r0, 2 * r0, 4 * r0)]
    max_small = 0
    for c in centers:
        for r in small_radii:
            if r > 4 * r0:
                continue
            net = _greedy_net(space, space.ball(c, r), r / 2)
            max_small = max(max_small, len(net))
    D = max(float(D0), math.floor(9**eps * (K + 1)) + 1)
    checks = []
    if pairs:
        for R, r in pairs:
            if not 0 < r <= R:
                raise ValueError("cover pairs need 0 < r <= R")
            worst = 0
            for c in centers:
                worst = max(worst, len(_greedy_net(space, space.ball(c, R), r)))
            bound = D ** (math.log2(math.floor(R / r)) + 1)
            checks.append(CoverCheck(R=float(R), r=float(r), count=worst,
                                     bound=bound, ok=worst <= bound))
    return DoublingReport(D0=D0, max_small_cover=max_small,
                          small_ok=max_small <= D0, D=D, pairs=tuple(checks))


def fit_growth_exponent(table: BallTable) -> tuple[float, float]:
    """Least-squares growth exponent of log volume against log radius, and
    the minimal constant C with C^{-1} r^D <= volume <= C r^D on the table.

    The slope is fitted on the upper window [r_max/4, r_max], where the
    polynomial regime dominates; the smallest radii only reflect lattice
    transients and would bias the exponent down.  The constant is computed
    over the whole table.
    """
    rs = np.array([r for r in table.radii if r >= 1], dtype=float)
    if rs.size < 2:
        raise ValueError("need at least two radii >= 1 to fit growth")
    vols = np.array([table.volume(r) for r in rs])
    if np.any(vols <= 0):
        raise ValueError("ball volumes must be positive")
    window = rs >= rs.max() / 4
    if window.sum() < 4:
        window = np.ones_like(window)
    slope, _ = np.polyfit(np.log(rs[window]), np.log(vols[window]), 1)
    D_hat = float(slope)
    ratios = vols / rs**D_hat
    C_hat = float(max(ratios.max(), (1.0 / ratios).max()))
    return D_hat, C_hat


def word_metric_constants(C_V: float, D_G: float) -> tuple[float, float]:
    """The closed-form annular constants of a (D_G, C_V)-polynomial-growth
    word metric: theta = log2(1 + 1/(C_V^2 10^D_G)), c_V = (1 + same)^3."""
    if not C_V >= 1:
        raise ValueError("C_V must be >= 1")
    if not D_G > 0:
        raise ValueError("D_G must be positive")
    bump = 1.0 + 1.0 / (C_V**2 * 10.0**D_G)
    return math.log2(bump), bump**3


def growth_profile(space: FiniteSpace, table: BallTable,
                   centers: Iterable[int] | None = None,
                   eps: float = 1.0, D0: int | None = None) -> GrowthProfile:
    """Convenience assembly of the fitted geometric constants."""
    D_hat, C_hat = fit_growth_exponent(table)
    if centers is None:
        step = max(1, space.n // 8)
        centers = list(range(0, space.n, step))
    hi = min(space.safe_radius, space.diameter() / 2)
    rs = sorted({float(r) for r in np.linspace(space.r0 + 1, max(space.r0 + 1, hi), 6)
                 if space.r0 < r <= space.diameter() / 2})
    if not rs:
        raise ValueError("space too small for a growth profile")
    ss = sorted({float(s) for s in np.linspace(1, max(1.0, hi / 2), 4)})
    ann = annular_decay_profile(space, centers, rs, ss, eps=eps)
    dbl = geometric_doubling_check(space, D0 if D0 is not None else 1,
                                   centers=centers, eps=eps, K=max(ann.K_hat, 1e-9))
    d0 = D0 if D0 is not None else max(1, dbl.max_small_cover)
    return GrowthProfile(D_G=D_hat, C_V=C_hat, eps=eps,
                         K=max(ann.K_hat, 1e-9), K_eps=ann.K_eps_formula, D0=d0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_FORMAT = "ergolab-space"
_VERSION = 1


def space_to_json(space: FiniteSpace) -> dict:
    doc: dict = {
        "format": _FORMAT,
        "version": _VERSION,
        "label": space.label,
        "n": space.n,
        "r0": space.r0,
    }
    if np.all(space.weights == 1.0):
        doc["weights"] = "uniform"
    else:
        doc["weights"] = [float(w) for w in space.weights]
    if isinstance(space, GroupSpace):
        doc["metric"] = {
            "kind": "group",
            "family": space.group.family,
            "d": space.group.d,
            "modulus": space.group.modulus,
            "radius": space.radius,
            "standard_generators": space._standard_gens,
        }
        if not space._standard_gens:
            raise ValueError("custom-generator spaces are not serializable")
    elif isinstance(space, MatrixSpace):
        doc["metric"] = {
            "kind": "matrix",
            "rows": [[float(v) for v in row] for row in space.dist_matrix()],
        }
        doc["provenance"] = space.provenance
    else:
        raise TypeError(f"cannot serialize {type(space).__name__}")
    return doc


def space_from_json(doc: dict) -> FiniteSpace:
    if doc.get("format") != _FORMAT:
        raise ValueError("not a space document")
    if doc.get("version") != _VERSION:
        raise ValueError(f"unsupported space document version {doc.get('version')}")
    weights = doc["weights"]
    weights = None if weights == "uniform" else np.asarray(weights, dtype=float)
    metric = doc["metric"]
    if metric["kind"] == "group":
        family = metric["family"]
        space, _ = build_group_space(
            family,
            d=metric["d"] if family == "zd" else None,
            radius=metric["radius"],
            modulus=metric["modulus"],
            r0=doc["r0"],
            weights=weights,
            label=doc["label"],
        )
        if space.n != doc["n"]:
            raise ValueError("rebuilt space size does not match document")
        return space
    if metric["kind"] == "matrix":
        return MatrixSpace(np.asarray(metric["rows"], dtype=float),
                           weights=weights, r0=doc["r0"], label=doc["label"],
                           provenance=doc.get("provenance"))
    raise ValueError(f"unknown metric kind {metric['kind']!r}")


def save_space(space: FiniteSpace, path) -> None:
    with open(path, "w") as fh:
        json.dump(space_to_json(space), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_space(path) -> FiniteSpace:
    with open(path) as fh:
        return space_from_json(json.load(fh))
