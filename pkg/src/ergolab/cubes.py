"""Dyadic cube systems on finite metric measure spaces.

A system is built in three steps: greedy nets per scale (maximal separated
sets), nearest-center assignment at the finest level, and parent chains
upward.  Axioms (partition, nesting, unique parent) then hold by
construction and are verified rather than assumed; the ball sandwich
B(z, a0 d^k) <= Q <= B(z, C1 d^k) is measured cube by cube.

The boundary machinery (layer and halo measures with their derived
constants L0..L3, eta, C2, C2') lives here too.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .space import FiniteSpace

__all__ = [
    "HKParams",
    "BoundaryConstants",
    "Nets",
    "DyadicSystem",
    "ConstructionError",
    "select_nets",
    "build_cubes",
    "verify_cube_axioms",
    "AxiomReport",
    "boundary_layer_report",
    "LayerReport",
    "system_to_json",
    "system_from_json",
    "save_system",
    "load_system",
]


class ConstructionError(ValueError):
    """The cube construction could not complete under the given parameters."""


def _log_base(x: float, delta: float) -> float:
    v = math.log(x) / math.log(delta)
    r = round(v)
    # snap values that are integers up to float noise, so that floors and
    # ceilings of exact powers come out right
    return float(r) if abs(v - r) < 1e-9 else v


@dataclass(frozen=True)
class HKParams:
    """Construction parameters: scale base delta and the net constants.

    Admissibility demands 18*C0/delta <= c0; the derived constants are
    a0 = c0/3 (inner ball) and C1 = 2*C0 (outer ball).  Defaults pick the
    smallest admissible C0 at a round delta.
    """

    delta: float = 36.0
    c0: float = 1.0
    C0: float = 2.0
    k_min: int | None = None
    k_max: int | None = None

    def __post_init__(self) -> None:
        if not self.delta > 1:
            raise ValueError("delta must exceed 1")
        if not 0 < self.c0 < self.C0:
            raise ValueError("need 0 < c0 < C0")
        lhs = 18.0 * self.C0 / self.delta
        if lhs > self.c0:
            raise ValueError(
                f"HKParams inadmissible: need 18*C0/delta <= c0, got "
                f"18*{self.C0}/{self.delta} = {lhs} > {self.c0}"
            )
        if (self.k_min is not None and self.k_max is not None
                and self.k_min > self.k_max):
            raise ValueError("k_min must not exceed k_max")

    @property
    def a0(self) -> float:
        return self.c0 / 3.0

    @property
    def C1(self) -> float:
        return 2.0 * self.C0

    def resolve_levels(self, space: FiniteSpace) -> tuple[list[int], list[str]]:
        """Concrete level list for a space, with clipping notes.

        Auto range: [ceil(log_delta resolution), ceil(log_delta diameter)+1].
        Scales below the resolution are degenerate (all nets equal the whole
        point set), so a requested k_min below the range is clipped.
        """
        lo_auto = int(math.ceil(_log_base(space.resolution(), self.delta)))
        diam = space.diameter()
        if diam > 0:
            hi_auto = int(math.ceil(_log_base(diam, self.delta))) + 1
        else:
            hi_auto = lo_auto
        notes: list[str] = []
        k_min = lo_auto if self.k_min is None else self.k_min
        k_max = hi_auto if self.k_max is None else self.k_max
        if k_min < lo_auto:
            notes.append(
                f"k_min raised from {k_min} to {lo_auto}: scale below resolution"
            )
            warnings.warn(notes[-1])
            k_min = lo_auto
        if k_max < k_min:
            raise ValueError("resolved level range is empty")
        return list(range(k_min, k_max + 1)), notes


def _search_int(pred, start: int) -> int:
    """Largest integer satisfying a monotone predicate, seeded near start."""
    k = start
    while not pred(k):
        k -= 1
    while pred(k + 1):
        k += 1
    return k


@dataclass(frozen=True)
class BoundaryConstants:
    """The derived boundary-layer constants for given construction
    parameters, annular threshold r0, and annular profile (K, eps)."""

    delta: float
    c0: float
    C0: float
    r0: float
    K: float
    eps: float
    L0: int
    L1: int
    L2: int
    L3: int
    eta: float
    C2: float
    C2_prime: float
    K_eps: float
    n0: int
    n1: int
    k1: int

    @classmethod
    def derive(cls, params: HKParams, r0: float, K: float = 1.0,
               eps: float = 1.0) -> "BoundaryConstants":
        if not r0 > 0:
            raise ValueError("r0 must be positive")
        if not K > 0:
            raise ValueError("K must be positive")
        if not 0 < eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        d, c0, C0 = params.delta, params.c0, params.C0
        a0, C1 = params.a0, params.C1
        L0 = math.floor(_log_base(12.0 / c0, d)) + 1
        L1 = math.floor(_log_base(36.0 * r0 / c0, d)) + 1
        L2 = math.floor(_log_base(4.0 * C0 + 1.0, d)) + 1
        body = 2.0 * (K + 1) ** 2 * (72.0 * C0 / c0) ** (2 * eps)
        L3 = math.floor(body) + L0 + L2
        eta = _log_base(2.0, d) / L3
        C2 = 4.0 * (K + 1) ** 2 * (72.0 * C0 / c0) ** (2 * eps)
        C2p = (K + 1) * (3.0 * C1 / a0) ** eps
        K_eps = (2**eps + 1) * K + 2**eps
        # integer thresholds satisfy their defining inequalities exactly
        n1 = max(int(math.ceil(_log_base(2.0 * r0, d))), 0)
        while d**n1 < 2.0 * r0:
            n1 += 1
        while n1 > 0 and d ** (n1 - 1) >= 2.0 * r0:
            n1 -= 1
        k1 = _search_int(lambda k: C1 * d**k <= 1.0,
                         int(math.floor(_log_base(1.0 / C1, d))))
        n0 = max(L1 - L0, 0)
        return cls(delta=d, c0=c0, C0=C0, r0=r0, K=K, eps=eps,
                   L0=L0, L1=L1, L2=L2, L3=L3, eta=eta, C2=C2,
                   C2_prime=C2p, K_eps=K_eps, n0=n0, n1=max(n1, 0), k1=k1)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "delta", "c0", "C0", "r0", "K", "eps", "L0", "L1", "L2", "L3",
            "eta", "C2", "C2_prime", "K_eps", "n0", "n1", "k1")}


# ---------------------------------------------------------------------------
# nets and cubes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Nets:
    levels: tuple[int, ...]
    centers: tuple[np.ndarray, ...]
    notes: tuple[str, ...]


def select_nets(space: FiniteSpace, params: HKParams) -> Nets:
    """Greedy maximal c0*delta^k-separated nets, one per resolved level.

    Points are scanned in ascending index; a point joins the net when its
    distance to every kept point is >= the separation.  Maximality gives
    the covering half of the net property (every point strictly within
    c0*delta^k <= C0*delta^k of some center).
    """
    levels, notes = params.resolve_levels(space)
    centers: list[np.ndarray] = []
    resolution = space.resolution()
    diam = space.diameter()
    for k in levels:
        sep = params.c0 * params.delta**k
        if sep <= resolution:
            # distinct points are automatically separated
            centers.append(np.arange(space.n))
            continue
        if sep > diam:
            centers.append(np.array([0]))
            continue
        kept: list[int] = []
        min_dist = np.full(space.n, np.inf)
        for p in range(space.n):
            if min_dist[p] >= sep:
                kept.append(p)
                np.minimum(min_dist, space.dist_row(p), out=min_dist)
        centers.append(np.array(kept))
    return Nets(tuple(levels), tuple(centers), tuple(notes))


@dataclass(frozen=True)
class DyadicSystem:
    """Cubes at every level: centers, a point -> cube assignment per level,
    and parent links between consecutive levels."""

    space: FiniteSpace
    params: HKParams
    levels: tuple[int, ...]
    centers: tuple[np.ndarray, ...]
    assign: tuple[np.ndarray, ...]
    parents: tuple[np.ndarray, ...]     # one per level except the coarsest
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.centers) != len(self.levels) or len(self.assign) != len(self.levels):
            raise ValueError("per-level arrays out of step with levels")
        if len(self.parents) != max(len(self.levels) - 1, 0):
            raise ValueError("need a parent table per non-top level")

    def level_index(self, k: int) -> int:
        try:
            return self.levels.index(k)
        except ValueError:
            raise ValueError(f"level {k} not in system (has {self.levels})") from None

    def n_cubes(self, k: int) -> int:
        return len(self.centers[self.level_index(k)])

    def members(self, k: int, cube: int) -> np.ndarray:
        li = self.level_index(k)
        return np.nonzero(self.assign[li] == cube)[0]

    def cube_measures(self, k: int) -> np.ndarray:
        li = self.level_index(k)
        return np.bincount(self.assign[li], weights=self.space.weights,
                           minlength=len(self.centers[li]))

    @property
    def finest(self) -> int:
        return self.levels[0]

    @property
    def coarsest(self) -> int:
        return self.levels[-1]


def build_cubes(space: FiniteSpace, params: HKParams,
                nets: Nets | None = None) -> DyadicSystem:
    """Assemble a dyadic system from the nets.

    Points are assigned to the nearest finest-level center (ties to the
    lower center index); each center then claims the nearest next-level
    center as parent.  Memberships at coarser levels follow the chains.
    """
    if nets is None:
        nets = select_nets(space, params)
    levels = list(nets.levels)
    centers = [np.asarray(c) for c in nets.centers]

    def nearest(cands: np.ndarray,
                restrict: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        """Nearest candidate (ascending-index ties) for each point, using
        one distance row per candidate.  restrict selects the points of
        interest (None = all)."""
        m = space.n if restrict is None else len(restrict)
        best_d = np.full(m, np.inf)
        best_i = np.zeros(m, dtype=np.int64)
        for ci, c in enumerate(cands):
            row = space.dist_row(int(c))
            if restrict is not None:
                row = row[restrict]
            closer = row < best_d
            best_d[closer] = row[closer]
            best_i[closer] = ci
        return best_i, best_d

    fine_assign, _ = nearest(centers[0], None)
    assign = [fine_assign]
    parents: list[np.ndarray] = []
    for li in range(len(levels) - 1):
        k_up = levels[li + 1]
        par, par_d = nearest(centers[li + 1], centers[li])
        limit = params.C0 * params.delta**k_up
        bad = par_d >= limit
        if np.any(bad):
            worst = int(np.nonzero(bad)[0][0])
            raise ConstructionError(
                f"center {int(centers[li][worst])} at level {levels[li]} has no "
                f"parent center within C0*delta^{k_up} = {limit}; the nets "
                f"violate the covering property (admissibility)"
            )
        parents.append(par)
        assign.append(par[assign[-1]])
    return DyadicSystem(space, params, tuple(levels),
                        tuple(centers), tuple(assign), tuple(parents),
                        tuple(nets.notes))


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AxiomViolation:
    axiom: str
    level: int
    cube: int
    detail: str


@dataclass(frozen=True)
class AxiomReport:
    n_cubes: int
    partition_ok: bool          # (i)  each level partitions the space
    nesting_ok: bool            # (ii) cubes nest or are disjoint across levels
    parent_ok: bool             # (iii) stored parents contain their children
    sandwich_checked: int       # (iv) cubes examined
    sandwich_passed: int
    sandwich_ok_in_safe: bool   # (iv) holds whenever delta^k <= safe radius
    separation_ok: bool         # centers >= c0 delta^k apart
    covering_ok: bool           # every point < C0 delta^k from a center
    violations: tuple[AxiomViolation, ...]

    @property
    def all_pass(self) -> bool:
        return (self.partition_ok and self.nesting_ok and self.parent_ok
                and self.sandwich_ok_in_safe and self.separation_ok
                and self.covering_ok)


_MAX_VIOLATIONS = 50


def verify_cube_axioms(system: DyadicSystem) -> AxiomReport:
    """Exhaustively check the four cube axioms and the net property."""
    space = system.space
    viol: list[AxiomViolation] = []

    def add(axiom: str, level: int, cube: int, detail: str) -> None:
        if len(viol) < _MAX_VIOLATIONS:
            viol.append(AxiomViolation(axiom, level, cube, detail))

    n_cubes = sum(len(c) for c in system.centers)

    # (i): assignments valid and no cube empty
    partition_ok = True
    for li, k in enumerate(system.levels):
        a = system.assign[li]
        m = len(system.centers[li])
        if a.shape != (space.n,) or a.min() < 0 or a.max() >= m:
            partition_ok = False
            add("i", k, -1, "assignment out of range")
            continue
        counts = np.bincount(a, minlength=m)
        for cube in np.nonzero(counts == 0)[0]:
            partition_ok = False
            add("i", k, int(cube), "empty cube")

    # (ii): each finer cube meets exactly one coarser cube
    nesting_ok = True
    for li in range(len(system.levels)):
        for lj in range(li + 1, len(system.levels)):
            fine, coarse = system.assign[li], system.assign[lj]
            m = len(system.centers[lj])
            keys = fine.astype(np.int64) * m + coarse
            fine_ids = np.unique(keys) // m
            dup = fine_ids[:-1][fine_ids[:-1] == fine_ids[1:]]
            for cube in np.unique(dup):
                nesting_ok = False
                add("ii", system.levels[li], int(cube),
                    f"straddles two cubes at level {system.levels[lj]}")

    # (iii): stored parent links agree with actual containment
    parent_ok = True
    for li in range(len(system.levels) - 1):
        expected = system.parents[li][system.assign[li]]
        mism = np.nonzero(expected != system.assign[li + 1])[0]
        if mism.size:
            parent_ok = False
            cube = int(system.assign[li][mism[0]])
            add("iii", system.levels[li], cube,
                "members leave the stored parent")

    # (iv) + the net property, one distance row per cube
    a0, C1 = system.params.a0, system.params.C1
    c0, C0, delta = system.params.c0, system.params.C0, system.params.delta
    safe = space.safe_radius
    checked = passed = 0
    sandwich_ok_in_safe = True
    separation_ok = True
    covering_ok = True
    for li, k in enumerate(system.levels):
        scale = delta**k
        cents = system.centers[li]
        a = system.assign[li]
        cover_min = np.full(space.n, np.inf)
        for ci, c in enumerate(cents):
            row = space.dist_row(int(c))
            np.minimum(cover_min, row, out=cover_min)
            others = row[cents]
            others[ci] = np.inf
            if others.size > 1 and others.min() < c0 * scale:
                separation_ok = False
                add("separation", k, ci,
                    f"center pair at distance {others.min()} < {c0 * scale}")
            mine = a == ci
            checked += 1
            inner_bad = np.any((row <= a0 * scale) & ~mine)
            outer_bad = np.any(mine & (row > C1 * scale))
            if inner_bad or outer_bad:
                side = "inner" if inner_bad else "outer"
                add("iv", k, ci, f"{side} sandwich violated")
                if scale <= safe:
                    sandwich_ok_in_safe = False
            else:
                passed += 1
        if np.any(cover_min >= C0 * scale):
            covering_ok = False
            add("covering", k, -1,
                f"point at distance >= {C0 * scale} from every center")

    return AxiomReport(
        n_cubes=n_cubes, partition_ok=partition_ok, nesting_ok=nesting_ok,
        parent_ok=parent_ok, sandwich_checked=checked, sandwich_passed=passed,
        sandwich_ok_in_safe=sandwich_ok_in_safe, separation_ok=separation_ok,
        covering_ok=covering_ok, violations=tuple(viol))


# ---------------------------------------------------------------------------
# boundary layers and halos
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerRow:
    level: int
    cube: int
    L: int
    t: float
    measure: float
    inner: float
    inner_bound: float
    outer: float
    outer_bound: float
    halo_bound: float
    layer_in_range: bool
    halo_in_range: bool


@dataclass(frozen=True)
class LayerReport:
    level: int
    L: int
    t: float
    rows: tuple[LayerRow, ...]

    @property
    def in_range_ok(self) -> bool:
        """Inner bound honored on every row inside the lemma hypotheses."""
        return all(r.inner <= r.inner_bound + 1e-9
                   for r in self.rows if r.layer_in_range)


def boundary_layer_report(system: DyadicSystem, space: FiniteSpace,
                          constants: BoundaryConstants, *, level: int, L: int,
                          cubes: Sequence[int] | None = None) -> LayerReport:
    """Layer and halo measures for the level-``level`` cubes at depth ``L``.

    With t = delta^(level-L), the inner layer {x in Q : d(x, Q^c) <= t} is
    exactly the halo of Q by t-balls, and the outer layer
    {x not in Q : d(x, Q) <= t} is the mirrored halo; the rows carry both
    bound values (C2 d^{-L eta} m(Q), and C2*C2' d^{-L eta} m(Q) for the
    outer layer).  Out-of-hypothesis requests are computed but flagged.
    """
    li = system.level_index(level)
    a = system.assign[li]
    n_cubes = len(system.centers[li])
    t = constants.delta ** (level - L)
    wanted = np.arange(n_cubes) if cubes is None else np.asarray(list(cubes))

    order = np.argsort(a, kind="stable")
    starts = np.searchsorted(a[order], np.arange(n_cubes))

    w = space.weights
    inner_w = np.zeros(n_cubes)
    outer_w = np.zeros(n_cubes)
    for x in range(space.n):
        row = space.dist_row(x)[order]
        per_cube = np.minimum.reduceat(row, starts)
        own = a[x]
        near = per_cube <= t
        near[own] = False
        outer_w[near] += w[x]
        per_cube[own] = np.inf
        if per_cube.min() <= t:
            inner_w[own] += w[x]

    measures = system.cube_measures(level)
    decay = constants.delta ** (-L * constants.eta)
    layer_in = constants.L0 < L < level + constants.L0 - constants.L1
    halo_in = (level - L) > constants.n0 and L > constants.L0
    rows = []
    for cube in wanted:
        mq = float(measures[cube])
        rows.append(LayerRow(
            level=level, cube=int(cube), L=L, t=t, measure=mq,
            inner=float(inner_w[cube]),
            inner_bound=constants.C2 * decay * mq,
            outer=float(outer_w[cube]),
            outer_bound=constants.C2 * constants.C2_prime * decay * mq,
            halo_bound=constants.C2 * decay * mq,
            layer_in_range=bool(layer_in), halo_in_range=bool(halo_in)))
    return LayerReport(level=level, L=L, t=t, rows=tuple(rows))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_FORMAT = "ergolab-cubes"
_VERSION = 1


def system_to_json(system: DyadicSystem,
                   constants: BoundaryConstants | None = None) -> dict:
    if constants is None:
        constants = BoundaryConstants.derive(system.params, system.space.r0)
    p = system.params
    return {
        "format": _FORMAT,
        "version": _VERSION,
        "space_label": system.space.label,
        "n": system.space.n,
        "params": {"delta": p.delta, "c0": p.c0, "C0": p.C0,
                   "k_min": p.k_min, "k_max": p.k_max},
        "constants": constants.to_json(),
        "levels": list(system.levels),
        "centers": [[int(c) for c in cs] for cs in system.centers],
        "assign": [[int(v) for v in a] for a in system.assign],
        "parents": [[int(v) for v in pr] for pr in system.parents],
        "notes": list(system.notes),
    }


def system_from_json(doc: dict, space: FiniteSpace) -> DyadicSystem:
    if doc.get("format") != _FORMAT:
        raise ValueError("not a cube-system document")
    if doc.get("version") != _VERSION:
        raise ValueError(f"unsupported cube document version {doc.get('version')}")
    if doc["n"] != space.n:
        raise ValueError("document was built for a different space size")
    p = doc["params"]
    params = HKParams(delta=p["delta"], c0=p["c0"], C0=p["C0"],
                      k_min=p["k_min"], k_max=p["k_max"])
    return DyadicSystem(
        space, params, tuple(doc["levels"]),
        tuple(np.asarray(c, dtype=np.int64) for c in doc["centers"]),
        tuple(np.asarray(a, dtype=np.int64) for a in doc["assign"]),
        tuple(np.asarray(pr, dtype=np.int64) for pr in doc["parents"]),
        tuple(doc.get("notes", ())))


def save_system(system: DyadicSystem, path,
                constants: BoundaryConstants | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(system_to_json(system, constants), fh, sort_keys=True)
        fh.write("\n")


def load_system(path, space: FiniteSpace) -> DyadicSystem:
    with open(path) as fh:
        return system_from_json(json.load(fh), space)
