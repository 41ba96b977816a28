"""Measure-preserving actions of finite group quotients and their ergodic
averages.

A system is a finite probability space together with an action of a group
quotient; the ergodic average A_r f(x) is the plain mean of f(tau_{g^-1} x)
over the word-metric ball |g| <= r.  Infinite acting groups are replaced by
finite quotients ("desk-scale" systems): measure preservation is then exact
and the full-group ball averages every orbit evenly, so orbit means are
reached exactly instead of asymptotically.

For the regular action of a quotient on itself the ergodic averages and the
geometric ball averages on the same quotient coincide after identifying the
point with the group element.  Both sides here go through the same shell
sweep (`operators.sweep_profile`) with the same permutation tables, so the
agreement is bitwise, not merely within rounding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .operators import avg_profile, sweep_profile
from .space import GroupSpace, build_group_space
from .stats import jump_count_batch, upcrossing_count_batch

__all__ = [
    "ActionError",
    "MPSystem",
    "regular_system",
    "build_system",
    "action_profile",
    "action_average",
    "TransferenceReport",
    "transference_check",
    "TailReport",
    "tail_experiment",
    "ConvergenceReport",
    "convergence_probe",
]


class ActionError(ValueError):
    """The data does not define a measure-preserving action."""


class MPSystem:
    """A finite probability space with a measure-preserving group action.

    ``perm_for(j)`` must return, for the j-th group element u (in the
    quotient's canonical order), the state permutation x -> tau_{u^-1}(x);
    gathering f through it evaluates the Koopman translate T_u f.  The
    constructor checks bijectivity and measure preservation on the
    generators, the identity, and a sample of products (the homomorphism
    law composes as perm(uv) = perm(v)[perm(u)]).
    """

    def __init__(self, group: GroupSpace, mu, perm_for: Callable[[int], np.ndarray],
                 label: str = "system", validate: bool = True,
                 homomorphism_samples: int = 40, seed: int = 0) -> None:
        if not group.is_quotient:
            raise ActionError("the acting group must be a finite quotient")
        mu = np.asarray(mu, dtype=float)
        if mu.ndim != 1 or len(mu) == 0:
            raise ActionError("mu must be a one-dimensional weight vector")
        if not np.all(mu > 0):
            raise ActionError("mu must be strictly positive")
        self.group = group
        self.n_states = len(mu)
        self.mu = mu / mu.sum()
        self.label = label
        self._perm_for = perm_for
        self._cache: dict[int, np.ndarray] = {}
        if validate:
            self._validate(homomorphism_samples, seed)

    def act_perm(self, j: int) -> np.ndarray:
        """State permutation for group element index j (tau_{u_j^-1})."""
        if j not in self._cache:
            perm = np.asarray(self._perm_for(int(j)))
            if perm.shape != (self.n_states,):
                raise ActionError("action permutation has the wrong length")
            self._cache[j] = perm
        return self._cache[j]

    def _generator_indices(self) -> np.ndarray:
        g = self.group
        gens = g.group.standard_generators()
        idx = g.index_of(gens)
        if np.any(idx < 0):
            raise ActionError("generators missing from the enumerated quotient")
        return np.unique(idx)

    def _validate(self, samples: int, seed: int) -> None:
        g = self.group
        if g.word_lengths[0] != 0:
            raise ActionError("canonical order must start at the identity")
        ident = self.act_perm(0)
        if not np.array_equal(ident, np.arange(self.n_states)):
            raise ActionError("the identity element must act as the identity map")
        counts = np.zeros(self.n_states, dtype=np.int64)
        for j in self._generator_indices():
            perm = self.act_perm(int(j))
            counts[:] = 0
            np.add.at(counts, perm, 1)
            if counts.max() != 1:
                raise ActionError(
                    f"generator element {j} does not act bijectively")
            if np.abs(self.mu[perm] - self.mu).max() > 1e-12:
                raise ActionError(
                    f"generator element {j} does not preserve the measure")
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            i = int(rng.integers(g.n))
            j = int(rng.integers(g.n))
            prod = g.group.mult(g.elements[i], g.elements[j])
            k = int(g.index_of(prod)[0])
            if k < 0:
                raise ActionError("group product left the enumerated quotient")
            lhs = self.act_perm(k)
            rhs = self.act_perm(j)[self.act_perm(i)]
            if not np.array_equal(lhs, rhs):
                raise ActionError(
                    f"action is not a homomorphism at the pair ({i}, {j})")

    def orbit_labels(self) -> np.ndarray:
        """Connected components of the action graph, labelled by their
        smallest state index."""
        labels = np.arange(self.n_states)
        perms = []
        for j in self._generator_indices():
            perms.append(self.act_perm(int(j)))
        changed = True
        while changed:
            changed = False
            for perm in perms:
                # pull labels both ways along the edge x <-> perm[x]
                m = np.minimum(labels, labels[perm])
                scatter = labels.copy()
                np.minimum.at(scatter, perm, labels)
                m = np.minimum(m, scatter)
                if not np.array_equal(m, labels):
                    labels = m
                    changed = True
        return labels

    def orbit_means(self, values: np.ndarray) -> np.ndarray:
        """Per-state mean of ``values`` over the state's orbit (mu-weighted).

        Uniform mu takes the plain sum/count path so that exactly summable
        values (integers, signs) give the exact mean rather than one
        perturbed by the 1/n weights.
        """
        labels = self.orbit_labels()
        _, compact = np.unique(labels, return_inverse=True)
        if np.all(self.mu == self.mu[0]):
            sums = np.bincount(compact, weights=values)
            sizes = np.bincount(compact)
            return (sums / sizes)[compact]
        sums = np.bincount(compact, weights=self.mu * values)
        mass = np.bincount(compact, weights=self.mu)
        return (sums / mass)[compact]


def regular_system(space: GroupSpace) -> MPSystem:
    """The quotient acting on itself by right translation.

    The action permutations are the space's own translation tables, shared
    object-for-object with the geometric side.
    """
    mu = np.ones(space.n) / space.n
    return MPSystem(space, mu, space.right_perm,
                    label=f"regular:{space.label}")


def build_system(kind: str, *, modulus: int | None = None,
                 family: str = "zd", d: int = 1,
                 step: int | Sequence[int] = 1,
                 step2: Sequence[int] | None = None,
                 acting_modulus: int | None = None,
                 mu=None, group: GroupSpace | None = None) -> MPSystem:
    """Construct one of the stock systems.

    kinds:
      regular     -- a quotient (zd or h3) acting on itself
      rotation    -- Z acting on Z_N by x -> x + step, modelled by the
                     quotient Z_M (M = acting_modulus, default N; step*M
                     must vanish mod N so the quotient action is defined)
      rotation2d  -- Z^2 acting on Z_N^2 by two commuting shifts
      heisenberg  -- H3 mod N acting on itself (regular)
    """
    if kind == "regular":
        if group is None:
            if modulus is None:
                raise ValueError("regular systems need a modulus")
            group, _ = build_group_space(
                family, d=None if family == "h3" else d, modulus=modulus)
        return regular_system(group)

    if kind == "heisenberg":
        if modulus is None:
            raise ValueError("heisenberg systems need a modulus")
        group, _ = build_group_space("h3", d=3, modulus=modulus)
        return regular_system(group)

    if kind == "rotation":
        if modulus is None:
            raise ValueError("rotation systems need a modulus")
        n = int(modulus)
        a = int(step) if np.isscalar(step) else int(step[0])
        m = n if acting_modulus is None else int(acting_modulus)
        if (a * m) % n != 0:
            raise ActionError(
                f"acting modulus {m} incompatible with step {a} mod {n}: "
                f"step*M must vanish mod N for the quotient action")
        group, _ = build_group_space("zd", d=1, modulus=m)
        if mu is None:
            mu = np.ones(n) / n

        def perm_for(j: int) -> np.ndarray:
            e = int(group.elements[j, 0])
            return (np.arange(n) + a * e) % n

        return MPSystem(group, mu, perm_for, label=f"rotation:{a}:Z_{n}")

    if kind == "rotation2d":
        if modulus is None:
            raise ValueError("rotation2d systems need a modulus")
        n = int(modulus)
        v1 = np.asarray(step if not np.isscalar(step) else (1, 0),
                        dtype=np.int64)
        v2 = np.asarray(step2 if step2 is not None else (0, 1),
                        dtype=np.int64)
        if v1.shape != (2,) or v2.shape != (2,):
            raise ValueError("rotation2d steps must be pairs")
        m = n if acting_modulus is None else int(acting_modulus)
        for v in (v1, v2):
            if np.any((v * m) % n != 0):
                raise ActionError(
                    f"acting modulus {m} incompatible with step {tuple(v)} "
                    f"mod {n}: step*M must vanish mod N")
        group, _ = build_group_space("zd", d=2, modulus=m)
        if mu is None:
            mu = np.ones(n * n) / (n * n)
        grid_i, grid_j = np.divmod(np.arange(n * n), n)

        def perm_for(j: int) -> np.ndarray:
            e = group.elements[j]
            shift = (int(e[0]) * v1 + int(e[1]) * v2) % n
            return ((grid_i + shift[0]) % n) * n + (grid_j + shift[1]) % n

        return MPSystem(group, mu, perm_for, label=f"rotation2d:Z_{n}^2")

    raise ValueError(
        f"unknown kind {kind!r}; expected one of regular, rotation, "
        f"rotation2d, heisenberg")


# ---------------------------------------------------------------------------
# Ergodic averages
# ---------------------------------------------------------------------------

def _action_shells(system: MPSystem, rmax: int):
    g = system.group
    for s in range(1, rmax + 1):
        sl = g.shell_slice(s)
        yield s, [system.act_perm(j) for j in range(sl.start, sl.stop)]


def action_profile(system: MPSystem, values: np.ndarray,
                   radii: Sequence[float]) -> np.ndarray:
    """(len(radii), n_states) ergodic averages A_r f over the radius grid.

    The ball average weights group elements by counting measure, so the
    sweep runs with unit weights regardless of mu; this is also what makes
    the regular action reproduce the geometric averages bitwise.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (system.n_states,):
        raise ValueError("values must have one entry per state")
    rmax = min(int(math.floor(max(radii))), int(system.group.diameter()))
    return sweep_profile(values, np.ones(system.n_states),
                         _action_shells(system, rmax), radii)


def action_average(system: MPSystem, values: np.ndarray, r: float) -> np.ndarray:
    """Mean of f(tau_{g^-1} x) over the acting ball |g| <= r."""
    safe = system.group.safe_radius
    if r > safe:
        warnings.warn(
            f"radius {r} exceeds the safe radius {safe} of the acting group",
            stacklevel=2)
    return action_profile(system, values, [float(r)])[0]


# ---------------------------------------------------------------------------
# Transference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferenceReport:
    space_label: str
    radii: tuple[float, ...]
    lam: float
    max_discrepancy: float
    jumps_action: np.ndarray
    jumps_translation: np.ndarray

    @property
    def jumps_equal(self) -> bool:
        return bool(np.array_equal(self.jumps_action, self.jumps_translation))

    def to_json(self) -> dict:
        counts = np.bincount(self.jumps_action)
        return {
            "space": self.space_label,
            "radii": list(self.radii),
            "lambda": self.lam,
            "max_discrepancy": self.max_discrepancy,
            "jumps_equal": self.jumps_equal,
            "jump_histogram": {str(n): int(c) for n, c in enumerate(counts)
                               if c > 0},
        }


def transference_check(space: GroupSpace, values: np.ndarray,
                       radii: Sequence[float],
                       lam: float = 0.5) -> TransferenceReport:
    """Compare ergodic averages of the regular action against geometric
    ball averages on the quotient, pointwise and through jump counts."""
    system = regular_system(space)
    act = action_profile(system, values, radii)
    trans = avg_profile(np.asarray(values, dtype=float), space, radii)
    disc = float(np.abs(act - trans).max()) if act.size else 0.0
    return TransferenceReport(
        space_label=space.label,
        radii=tuple(float(r) for r in radii),
        lam=lam,
        max_discrepancy=disc,
        jumps_action=jump_count_batch(act, lam),
        jumps_translation=jump_count_batch(trans, lam))


# ---------------------------------------------------------------------------
# Tail experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailReport:
    kind: str                      # "jump" or "upcrossing"
    threshold: tuple[float, ...]   # (lam,) or (a, b)
    radii: tuple[float, ...]
    ns: tuple[int, ...]
    tails: tuple[float, ...]       # mu{N > n} for each n
    fitted: bool
    slope: float | None
    c1: float | None               # exp(intercept)
    c2: float | None               # exp(slope); in (0,1) iff slope < 0
    r_squared: float | None
    notes: tuple[str, ...]

    @property
    def decay_claimed(self) -> bool:
        return bool(self.fitted and self.slope is not None and self.slope < 0)

    def to_csv(self) -> str:
        lines = ["n,tail"]
        for n, t in zip(self.ns, self.tails):
            lines.append(f"{n},{t!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": list(self.threshold),
            "radii": list(self.radii),
            "fitted": self.fitted,
            "slope": self.slope,
            "c1": self.c1,
            "c2": self.c2,
            "r_squared": self.r_squared,
            "decay_claimed": self.decay_claimed,
            "notes": list(self.notes),
        }


def _ols_log_tail(ns: np.ndarray, tails: np.ndarray):
    """Least squares on log(tail) against n; returns slope, intercept, R^2."""
    y = np.log(tails)
    slope, intercept = np.polyfit(ns, y, 1)
    fit = slope * ns + intercept
    ss_res = float(((y - fit) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 and ss_res == 0.0 else (
        0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot)
    return float(slope), float(intercept), r2


def tail_experiment(system: MPSystem, values: np.ndarray,
                    radii: Sequence[float], *, lam: float | None = None,
                    upcross: tuple[float, float] | None = None) -> TailReport:
    """Distribution of the jump (or upcrossing) count of the ergodic
    averages over the radius grid, with a log-linear tail fit.

    The grid is capped at the acting group's safe radius; any capping is
    recorded in the report rather than applied silently.
    """
    if (lam is None) == (upcross is None):
        raise ValueError("pass exactly one of lam or upcross=(a, b)")
    values = np.asarray(values, dtype=float)
    notes: list[str] = []

    sup = float(np.abs(values).max()) if values.size else 0.0
    if sup > 1.0:
        warnings.warn("values clipped to sup-norm one", stacklevel=2)
        notes.append(f"values clipped to sup-norm one (was {sup:.6g})")
        values = np.clip(values, -1.0, 1.0)

    safe = system.group.safe_radius
    kept = [float(r) for r in radii if r <= safe]
    if len(kept) < len(radii):
        dropped = [float(r) for r in radii if r > safe]
        notes.append(
            f"radius grid capped at the safe radius {safe} of the acting "
            f"group; dropped {dropped}")
    if not kept:
        raise ValueError(
            f"all radii exceed the safe radius {safe} of the acting group")

    rows = action_profile(system, values, kept)
    if lam is not None:
        counts = jump_count_batch(rows, lam)
        kind, threshold = "jump", (float(lam),)
    else:
        a, b = upcross
        counts = upcrossing_count_batch(rows, a, b)
        kind, threshold = "upcrossing", (float(a), float(b))

    nmax = int(counts.max())
    ns = np.arange(nmax + 1)
    tails = np.array([float(system.mu[counts > n].sum()) for n in ns])

    pos = tails > 0
    if not pos.any():
        notes.append("all counts are zero; degenerate report, no fit")
        fitted, slope, c1, c2, r2 = False, None, None, None, None
    elif pos.sum() < 3:
        notes.append("fewer than three positive tail points; no fit claimed")
        fitted, slope, c1, c2, r2 = False, None, None, None, None
    else:
        slope, intercept, r2 = _ols_log_tail(ns[pos], tails[pos])
        c1, c2 = math.exp(intercept), math.exp(slope)
        fitted = True
        if slope >= 0:
            notes.append("fit slope is nonnegative; no decay constant claimed")

    return TailReport(kind=kind, threshold=threshold,
                      radii=tuple(kept), ns=tuple(int(n) for n in ns),
                      tails=tuple(float(t) for t in tails), fitted=fitted,
                      slope=slope, c1=c1, c2=c2, r_squared=r2,
                      notes=tuple(notes))


# ---------------------------------------------------------------------------
# Convergence probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceReport:
    radii: tuple[float, ...]
    distances: tuple[float, ...]   # max over x of |A_r f - orbit mean|
    n_orbits: int
    notes: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "radii": list(self.radii),
            "distances": list(self.distances),
            "n_orbits": self.n_orbits,
            "notes": list(self.notes),
        }


def convergence_probe(system: MPSystem, values: np.ndarray,
                      radii: Sequence[float]) -> ConvergenceReport:
    """Sup distance of the ergodic averages from the orbit-mean projection.

    Radii past the safe radius are allowed (a full-group ball reaches the
    orbit means exactly) but are named in the report.
    """
    values = np.asarray(values, dtype=float)
    notes: list[str] = []
    safe = system.group.safe_radius
    beyond = [float(r) for r in radii if r > safe]
    if beyond:
        notes.append(
            f"radii beyond the safe radius {safe} of the acting group: "
            f"{beyond}")
    rows = action_profile(system, values, list(radii))
    target = system.orbit_means(values)
    labels = system.orbit_labels()
    dists = np.abs(rows - target).max(axis=1)
    return ConvergenceReport(
        radii=tuple(float(r) for r in radii),
        distances=tuple(float(x) for x in dists),
        n_orbits=int(len(np.unique(labels))),
        notes=tuple(notes))
