"""Experiment orchestration: build spaces and cube systems from a declarative
JSON config, run verification suites and probes, and write reproducible
artifacts.

Every output (summary.txt, *.csv, *.json) embeds the SHA-256 of the
effective config, and every number downstream of randomness is derived from
the config seed, so rerunning the same config reproduces every file byte
for byte.  Exit codes: 0 all checks passed, 1 an exact invariant failed,
2 the config (or usage) is invalid.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .cubes import BoundaryConstants, HKParams, build_cubes, verify_cube_axioms
from .decomposition import GundyError, gundy_decompose
from .dynamics import build_system, convergence_probe, tail_experiment, \
    transference_check
from .martingale import SampleFunction, martingale_jump_probe
from .operators import OperatorConfig, _ENSEMBLES, _draw, domination_check, \
    norm_probe
from .space import build_group_space, fit_growth_exponent, \
    geometric_doubling_check

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2

VERIFY_SUITES = ("axioms", "domination", "gundy", "transference")
PROBE_OPERATORS = ("square", "variation", "average", "maximal")


class ConfigError(Exception):
    """Invalid configuration, anchored to a file line when one is known."""

    def __init__(self, message: str, path: str | None = None,
                 line: int | None = None) -> None:
        anchor = ""
        if path is not None:
            anchor = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{anchor} {message}".strip())


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

def _defaults() -> dict:
    return {
        "seed": 0,
        "out": "results",
        "threads": 1,
        "space": {
            "family": "zd", "d": 1, "modulus": 64, "radius": None,
            "r0": 1.0, "doubling_D0": None,
        },
        "cubes": {
            "delta": 36.0, "c0": 1.0, "C0": 2.0, "k_min": None, "k_max": None,
        },
        "operators": {"block_cap": 24, "p": 2.0},
        "probe": {
            "trials": 20, "p": 2.0, "gammas": [0.5, 1.0, 2.0],
            "operators": list(PROBE_OPERATORS),
        },
        "domination": {"trials": 4, "lambdas": [0.1, 0.5, 1.0]},
        "gundy": {"trials": 20, "gamma_factors": [1.1, 1.5, 3.0], "p": 2.0},
        "transference": {
            "radii": [1.0, 2.0, 4.0, 8.0, 16.0], "lambda": 0.5,
        },
        "experiment": {
            "kind": "rotation", "modulus": 1024, "step": 1,
            "lambda": 0.5, "upcross": None,
            "radii": {"start": 1.0, "stop": 256.0, "step": 1.0},
            "ensemble": "rademacher",
        },
    }


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v: Any) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)
            and np.isfinite(v))


def _is_num_list(v: Any) -> bool:
    return isinstance(v, list) and all(_is_num(x) for x in v)


_CHECKS = {
    ("seed",): ("a non-negative integer below 2^64",
                lambda v: _is_int(v) and 0 <= v < 2**64),
    ("out",): ("a string", lambda v: isinstance(v, str)),
    ("threads",): ("a positive integer", lambda v: _is_int(v) and v >= 1),
    ("space", "family"): ("'zd' or 'h3'", lambda v: v in ("zd", "h3")),
    ("space", "d"): ("a positive integer", lambda v: _is_int(v) and v >= 1),
    ("space", "modulus"): ("a positive integer or null",
                           lambda v: v is None or (_is_int(v) and v >= 1)),
    ("space", "radius"): ("a positive integer or null",
                          lambda v: v is None or (_is_int(v) and v >= 1)),
    ("space", "r0"): ("a positive number", lambda v: _is_num(v) and v > 0),
    ("space", "doubling_D0"): ("a positive integer or null",
                               lambda v: v is None or (_is_int(v) and v >= 1)),
    ("cubes", "delta"): ("a number > 1", lambda v: _is_num(v) and v > 1),
    ("cubes", "c0"): ("a positive number", lambda v: _is_num(v) and v > 0),
    ("cubes", "C0"): ("a positive number", lambda v: _is_num(v) and v > 0),
    ("cubes", "k_min"): ("an integer or null",
                         lambda v: v is None or _is_int(v)),
    ("cubes", "k_max"): ("an integer or null",
                         lambda v: v is None or _is_int(v)),
    ("operators", "block_cap"): ("an integer >= 2",
                                 lambda v: _is_int(v) and v >= 2),
    ("operators", "p"): ("a number >= 1", lambda v: _is_num(v) and v >= 1),
    ("probe", "trials"): ("a positive integer",
                          lambda v: _is_int(v) and v >= 1),
    ("probe", "p"): ("a number >= 1", lambda v: _is_num(v) and v >= 1),
    ("probe", "gammas"): ("a list of positive numbers",
                          lambda v: _is_num_list(v) and all(x > 0 for x in v)),
    ("probe", "operators"): (
        f"a non-empty sublist of {PROBE_OPERATORS}",
        lambda v: isinstance(v, list) and len(v) >= 1
        and all(x in PROBE_OPERATORS for x in v)),
    ("domination", "trials"): ("a positive integer",
                               lambda v: _is_int(v) and v >= 1),
    ("domination", "lambdas"): (
        "a list of positive numbers",
        lambda v: _is_num_list(v) and len(v) >= 1 and all(x > 0 for x in v)),
    ("gundy", "trials"): ("a positive integer",
                          lambda v: _is_int(v) and v >= 1),
    ("gundy", "gamma_factors"): (
        "a list of numbers > 1",
        lambda v: _is_num_list(v) and len(v) >= 1 and all(x > 1 for x in v)),
    ("gundy", "p"): ("a number >= 1", lambda v: _is_num(v) and v >= 1),
    ("transference", "radii"): (
        "a strictly increasing list of positive numbers",
        lambda v: _is_num_list(v) and len(v) >= 1 and all(x > 0 for x in v)
        and all(b > a for a, b in zip(v, v[1:]))),
    ("transference", "lambda"): ("a positive number",
                                 lambda v: _is_num(v) and v > 0),
    ("experiment", "kind"): (
        "one of regular, rotation, rotation2d, heisenberg",
        lambda v: v in ("regular", "rotation", "rotation2d", "heisenberg")),
    ("experiment", "modulus"): ("a positive integer",
                                lambda v: _is_int(v) and v >= 1),
    ("experiment", "step"): ("an integer", _is_int),
    ("experiment", "lambda"): ("a positive number or null",
                               lambda v: v is None or (_is_num(v) and v > 0)),
    ("experiment", "upcross"): (
        "a pair [a, b] with a < b, or null",
        lambda v: v is None or (_is_num_list(v) and len(v) == 2
                                and v[0] < v[1])),
    ("experiment", "radii"): (
        "a strictly increasing list or {start, stop, step}",
        lambda v: (_is_num_list(v) and len(v) >= 1
                   and all(b > a for a, b in zip(v, v[1:])))
        or (isinstance(v, dict) and set(v) == {"start", "stop", "step"}
            and all(_is_num(x) and x > 0 for x in v.values()))),
    ("experiment", "ensemble"): (f"one of {_ENSEMBLES}",
                                 lambda v: v in _ENSEMBLES),
}


def _line_of(raw: str, key: str) -> int | None:
    for i, line in enumerate(raw.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return None


def load_config(path: str | None, *, seed: int | None = None,
                out: str | None = None,
                threads: int | None = None) -> tuple[dict, str]:
    """Parse, validate, and canonicalize; returns (config, sha256).

    CLI overrides fold in before hashing, so the hash identifies the
    effective run, not just the file.  The output directory and the
    thread count are excluded: they change where results land and how
    fast they arrive, never what they say.
    """
    cfg = _defaults()
    raw = ""
    name = path or "<defaults>"
    if path is not None:
        try:
            raw = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", path)
        try:
            user = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", path, exc.lineno)
        if not isinstance(user, dict):
            raise ConfigError("top level must be a JSON object", path, 1)
        for key, value in user.items():
            if key not in cfg:
                raise ConfigError(f"unknown key {key!r}", path,
                                  _line_of(raw, key))
            if isinstance(cfg[key], dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"{key!r} must be an object", path,
                                      _line_of(raw, key))
                for sub, sval in value.items():
                    if sub not in cfg[key]:
                        raise ConfigError(f"unknown key {key}.{sub}", path,
                                          _line_of(raw, sub))
                    cfg[key][sub] = sval
            else:
                cfg[key] = value

    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    if threads is not None:
        cfg["threads"] = threads

    for keys, (want, ok) in _CHECKS.items():
        node: Any = cfg
        for k in keys:
            node = node[k]
        if not ok(node):
            raise ConfigError(f"{'.'.join(keys)} must be {want} "
                              f"(got {node!r})", name,
                              _line_of(raw, keys[-1]) if raw else None)
    if (cfg["space"]["modulus"] is None) == (cfg["space"]["radius"] is None):
        raise ConfigError("space needs exactly one of modulus or radius",
                          name, _line_of(raw, "space") if raw else None)
    exp = cfg["experiment"]
    if (exp["lambda"] is None) == (exp["upcross"] is None):
        raise ConfigError("experiment needs exactly one of lambda or upcross",
                          name, _line_of(raw, "experiment") if raw else None)

    hashed = {k: v for k, v in cfg.items() if k not in ("out", "threads")}
    canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    sha = hashlib.sha256(canonical.encode()).hexdigest()
    return cfg, sha


def _suite_seed(base: int, name: str) -> int:
    digest = hashlib.sha256(f"{base}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


# ---------------------------------------------------------------------------
# Artifact writing
# ---------------------------------------------------------------------------

def _py(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays for json serialization."""
    if isinstance(obj, dict):
        return {str(k): _py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_py(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_py(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _write_json(outdir: Path, name: str, payload: dict, sha: str) -> None:
    body = {"config_sha256": sha}
    body.update(payload)
    text = json.dumps(_py(body), sort_keys=True, indent=2) + "\n"
    (outdir / name).write_text(text)


def _write_csv(outdir: Path, name: str, header: str,
               rows: Sequence[str], sha: str) -> None:
    lines = [f"# config_sha256={sha}", header]
    lines.extend(rows)
    (outdir / name).write_text("\n".join(lines) + "\n")


def _append_summary(outdir: Path, sha: str, title: str,
                    lines: Sequence[str]) -> None:
    path = outdir / "summary.txt"
    chunk = [f"== {title} ==", f"config sha256: {sha}"]
    chunk.extend(lines)
    chunk.append("")
    with open(path, "a") as fh:
        fh.write("\n".join(chunk) + "\n")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _build_space(cfg: dict):
    s = cfg["space"]
    kwargs: dict[str, Any] = {"r0": s["r0"]}
    if s["family"] == "zd":
        kwargs["d"] = s["d"]
    if s["modulus"] is not None:
        kwargs["modulus"] = s["modulus"]
    else:
        kwargs["radius"] = s["radius"]
    try:
        return build_group_space(s["family"], **kwargs)
    except Exception as exc:
        raise ConfigError(f"space: {exc}")


def _build_params(cfg: dict) -> HKParams:
    c = cfg["cubes"]
    try:
        return HKParams(delta=c["delta"], c0=c["c0"], C0=c["C0"],
                        k_min=c["k_min"], k_max=c["k_max"])
    except ValueError as exc:
        raise ConfigError(f"cubes: {exc}")


def _radius_grid(spec) -> list[float]:
    if isinstance(spec, dict):
        out = []
        r = float(spec["start"])
        while r <= spec["stop"]:
            out.append(r)
            r += float(spec["step"])
        return out
    return [float(r) for r in spec]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_space(cfg: dict, sha: str, outdir: Path) -> int:
    space, table = _build_space(cfg)
    d_hat, c_hat = fit_growth_exponent(table)
    s = cfg["space"]
    d0 = s["doubling_D0"]
    if d0 is None:
        d0 = 3 ** s["d"] if s["family"] == "zd" else 130
    rep = geometric_doubling_check(space, d0)
    failures: list[str] = []
    if not rep.small_ok:
        failures.append(
            f"small-ball cover {rep.max_small_cover} exceeds D0={rep.D0}")
    for pair in rep.pairs:
        if not pair.ok:
            failures.append(f"cover check failed at pair {pair}")
    payload = {
        "label": space.label,
        "n": space.n,
        "diameter": space.diameter(),
        "resolution": space.resolution(),
        "safe_radius": space.safe_radius,
        "growth": {"exponent": d_hat, "constant": c_hat},
        "doubling": {"D0": rep.D0, "max_small_cover": rep.max_small_cover,
                     "small_ok": rep.small_ok, "D": rep.D},
        "failures": failures,
    }
    _write_json(outdir, "space.json", payload, sha)
    lines = [
        f"space {space.label}: {space.n} points, diameter "
        f"{space.diameter():g}, safe radius {space.safe_radius:g}",
        f"growth exponent {d_hat:.4f} (constant {c_hat:.4f})",
        f"doubling cover max {rep.max_small_cover} against D0={rep.D0}",
    ]
    lines += [f"FAIL: {f}" for f in failures] or ["all checks passed"]
    _append_summary(outdir, sha, "space", lines)
    return EXIT_VIOLATION if failures else EXIT_OK


def cmd_cubes(cfg: dict, sha: str, outdir: Path) -> int:
    space, _ = _build_space(cfg)
    params = _build_params(cfg)
    system = build_cubes(space, params)
    report = verify_cube_axioms(system)
    constants = BoundaryConstants.derive(params, r0=space.r0)
    payload = {
        "levels": list(system.levels),
        "sizes": [system.n_cubes(k) for k in system.levels],
        "notes": list(system.notes),
        "axioms": {
            "partition_ok": report.partition_ok,
            "nesting_ok": report.nesting_ok,
            "parent_ok": report.parent_ok,
            "sandwich_checked": report.sandwich_checked,
            "sandwich_passed": report.sandwich_passed,
            "sandwich_ok_in_safe": report.sandwich_ok_in_safe,
            "separation_ok": report.separation_ok,
            "covering_ok": report.covering_ok,
            "all_pass": report.all_pass,
        },
        "violations": [
            {"axiom": v.axiom, "level": v.level, "cube": v.cube,
             "detail": v.detail} for v in report.violations],
        "constants": constants.to_json(),
    }
    _write_json(outdir, "cubes.json", payload, sha)
    lines = [
        f"levels {list(system.levels)} with sizes "
        f"{[system.n_cubes(k) for k in system.levels]}",
        f"sandwich: {report.sandwich_passed}/{report.sandwich_checked} "
        f"cubes (all within safe radius: {report.sandwich_ok_in_safe})",
    ]
    lines += [f"note: {n}" for n in system.notes]
    if report.all_pass:
        lines.append("axioms: all pass")
    else:
        lines += [f"FAIL: axiom {v.axiom} at level {v.level} cube {v.cube}: "
                  f"{v.detail}" for v in report.violations[:10]]
    _append_summary(outdir, sha, "cubes", lines)
    return EXIT_OK if report.all_pass else EXIT_VIOLATION


def _suite_axioms(space, params, cfg: dict) -> dict:
    system = build_cubes(space, params)
    report = verify_cube_axioms(system)
    failures = [f"axiom {v.axiom} level {v.level} cube {v.cube}: {v.detail}"
                for v in report.violations]
    if not report.all_pass and not failures:
        failures = ["axiom flags not all true"]
    return {"suite": "axioms", "checks": report.n_cubes,
            "failures": failures,
            "notes": list(system.notes)}


def _suite_domination(space, params, cfg: dict) -> dict:
    system = build_cubes(space, params)
    opcfg = OperatorConfig.for_space(space, delta=params.delta,
                                     r0=space.r0,
                                     p=cfg["operators"]["p"],
                                     block_cap=cfg["operators"]["block_cap"])
    rng = np.random.default_rng(_suite_seed(cfg["seed"], "domination"))
    failures: list[str] = []
    checks = 0
    for t in range(cfg["domination"]["trials"]):
        values = _draw(_ENSEMBLES[t % len(_ENSEMBLES)], rng, space.n)
        f = SampleFunction(space.label, values)
        for lam in cfg["domination"]["lambdas"]:
            rep = domination_check(f, system, opcfg, lam)
            checks += 2 * space.n
            na = int(rep.violations_anchor.sum())
            nm = int(rep.violations_martingale.sum())
            if na or nm:
                failures.append(
                    f"trial {t} lambda {lam}: {na} anchor / {nm} martingale "
                    f"violations")
    return {"suite": "domination", "checks": checks, "failures": failures,
            "notes": [opcfg.notes[-1]] if opcfg.notes else []}


def _suite_gundy(space, params, cfg: dict) -> dict:
    system = build_cubes(space, params)
    rng = np.random.default_rng(_suite_seed(cfg["seed"], "gundy"))
    failures: list[str] = []
    checks = 0
    p = cfg["gundy"]["p"]
    for t in range(cfg["gundy"]["trials"]):
        values = rng.standard_normal(space.n)
        w = space.weights
        gmean = float((w * np.abs(values)).sum() / w.sum())
        f = SampleFunction(space.label, values)
        for factor in cfg["gundy"]["gamma_factors"]:
            gamma = gmean * factor
            try:
                res = gundy_decompose(f, system, gamma, p=p)
            except GundyError as exc:
                failures.append(f"trial {t} gamma {gamma:g}: {exc}")
                continue
            checks += 4
            scale = max(res.f_l1, 1.0)
            if res.reconstruction_gap > 1e-12:
                failures.append(f"trial {t}: reconstruction gap "
                                f"{res.reconstruction_gap:g}")
            if res.max_part_integral > 1e-12 * scale:
                failures.append(f"trial {t}: part integral "
                                f"{res.max_part_integral:g}")
            if not res.bounds_ok:
                failures.append(f"trial {t}: norm bounds violated")
    return {"suite": "gundy", "checks": checks, "failures": failures,
            "notes": []}


def _suite_transference(space, params, cfg: dict) -> dict:
    rng = np.random.default_rng(_suite_seed(cfg["seed"], "transference"))
    values = rng.standard_normal(space.n)
    radii = [r for r in cfg["transference"]["radii"]
             if r <= space.diameter()] or [1.0]
    rep = transference_check(space, values, radii,
                             lam=cfg["transference"]["lambda"])
    failures: list[str] = []
    if rep.max_discrepancy != 0.0:
        failures.append(f"max discrepancy {rep.max_discrepancy!r} != 0")
    if not rep.jumps_equal:
        failures.append("jump counts differ between action and translation")
    return {"suite": "transference", "checks": 2 * space.n,
            "failures": failures, "notes": []}


def cmd_verify(cfg: dict, sha: str, outdir: Path,
               suites: Sequence[str]) -> int:
    space, _ = _build_space(cfg)
    params = _build_params(cfg)
    runners = {"axioms": _suite_axioms, "domination": _suite_domination,
               "gundy": _suite_gundy, "transference": _suite_transference}
    results = []
    for name in suites:
        results.append(runners[name](space, params, cfg))
    passed = all(not r["failures"] for r in results)
    _write_json(outdir, "verify.json",
                {"suites": results, "passed": passed}, sha)
    lines = []
    for r in results:
        status = "PASS" if not r["failures"] else "FAIL"
        lines.append(f"suite {r['suite']}: {status} ({r['checks']} checks)")
        lines += [f"  {f}" for f in r["failures"][:10]]
        lines += [f"  note: {n}" for n in r["notes"]]
    _append_summary(outdir, sha, "verify", lines)
    return EXIT_OK if passed else EXIT_VIOLATION


def cmd_probe(cfg: dict, sha: str, outdir: Path) -> int:
    space, _ = _build_space(cfg)
    params = _build_params(cfg)
    system = build_cubes(space, params)
    opcfg = OperatorConfig.for_space(space, delta=params.delta, r0=space.r0,
                                     p=cfg["probe"]["p"],
                                     block_cap=cfg["operators"]["block_cap"])
    rows: list[str] = []
    reports = {}
    failures: list[str] = []
    for op in cfg["probe"]["operators"]:
        rep = norm_probe(system, opcfg, op, p=cfg["probe"]["p"],
                         trials=cfg["probe"]["trials"],
                         seed=_suite_seed(cfg["seed"], f"probe:{op}"),
                         gammas=tuple(cfg["probe"]["gammas"]))
        reports[op] = rep.to_json()
        for row in rep.rows:
            rows.append(f"{row.operator},{row.p},{row.seed},{row.ensemble},"
                        f"{row.ratio!r}")
        if rep.avg_bound_ok is False:
            failures.append(
                f"average operator exceeded the doubling bound "
                f"D^(1/p) = {rep.doubling_D:.6g}^(1/{rep.p})")
    jump = martingale_jump_probe(system,
                                 trials=cfg["probe"]["trials"],
                                 seed=_suite_seed(cfg["seed"], "probe:jump"),
                                 p=cfg["probe"]["p"])
    _write_csv(outdir, "probe.csv", "operator,p,seed,ensemble,ratio",
               rows, sha)
    _write_json(outdir, "probe.json",
                {"operators": reports, "martingale_jump": jump,
                 "failures": failures}, sha)
    lines = [f"{op}: strong max {reports[op]['strong_max']:.6f} "
             f"mean {reports[op]['strong_mean']:.6f}"
             for op in cfg["probe"]["operators"]]
    lines.append(f"martingale jump probe: max ratio {jump['max_ratio']:.6f}")
    lines += [f"FAIL: {f}" for f in failures]
    _append_summary(outdir, sha, "probe", lines)
    return EXIT_VIOLATION if failures else EXIT_OK


def cmd_experiment(cfg: dict, sha: str, outdir: Path) -> int:
    e = cfg["experiment"]
    try:
        system = build_system(e["kind"], modulus=e["modulus"], step=e["step"])
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}")
    rng = np.random.default_rng(_suite_seed(cfg["seed"], "experiment"))
    values = _draw(e["ensemble"], rng, system.n_states)
    grid = _radius_grid(e["radii"])
    if e["lambda"] is not None:
        tail = tail_experiment(system, values, grid, lam=e["lambda"])
    else:
        a, b = e["upcross"]
        tail = tail_experiment(system, values, grid, upcross=(a, b))
    conv = convergence_probe(system, values, list(tail.radii))

    failures: list[str] = []
    diffs = np.diff(np.asarray(tail.tails))
    if np.any(diffs > 0):
        failures.append("tail is not non-increasing")
    base = float((system.mu * np.clip(values, -1, 1)).sum())
    from .dynamics import action_profile

    rows = action_profile(system, np.clip(values, -1, 1), list(tail.radii))
    drift = float(np.abs(rows @ system.mu - base).max())
    if drift > 1e-12:
        failures.append(f"mean not preserved along radii (drift {drift:g})")

    _write_csv(outdir, "tail.csv", "n,tail",
               [f"{n},{t!r}" for n, t in zip(tail.ns, tail.tails)], sha)
    _write_json(outdir, "experiment.json",
                {"tail": tail.to_json(), "convergence": conv.to_json(),
                 "mean_drift": drift, "failures": failures}, sha)
    lines = [
        f"{e['kind']} system, {system.n_states} states, "
        f"{len(tail.radii)} radii",
        (f"tail fit: c2 {tail.c2:.6f}, R^2 {tail.r_squared:.4f}"
         if tail.fitted else "tail fit: not claimed"),
        f"mean drift along radii: {drift:.3g}",
    ]
    lines += [f"note: {n}" for n in tail.notes]
    lines += [f"note: {n}" for n in conv.notes]
    lines += [f"FAIL: {f}" for f in failures]
    _append_summary(outdir, sha, "experiment", lines)
    return EXIT_VIOLATION if failures else EXIT_OK


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def _quantile_rows(csv_path: Path) -> list[tuple[str, float, float, float]]:
    by_op: dict[str, list[float]] = {}
    for line in csv_path.read_text().splitlines():
        if line.startswith("#") or line.startswith("operator"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            continue
        by_op.setdefault(parts[0], []).append(float(parts[4]))
    out = []
    for op in sorted(by_op):
        arr = np.asarray(by_op[op])
        out.append((op, float(np.quantile(arr, 0.5)),
                    float(np.quantile(arr, 0.9)), float(arr.max())))
    return out


def cmd_report(outdir: Path) -> int:
    if not outdir.is_dir():
        print(f"report: bundle directory {outdir} does not exist",
              file=sys.stderr)
        return EXIT_CONFIG
    artifacts = {name: outdir / f"{name}.json"
                 for name in ("space", "cubes", "verify", "probe",
                              "experiment")}
    found = {k: json.loads(p.read_text())
             for k, p in artifacts.items() if p.exists()}
    lines: list[str] = []
    csv_rows: list[str] = []
    if not found:
        lines.append("no suites run")
    else:
        shas = {v.get("config_sha256") for v in found.values()}
        lines.append(f"bundle: {len(found)} artifact(s), config "
                     f"{'/'.join(sorted(str(s)[:12] for s in shas))}")
        if "verify" in found:
            lines.append("")
            lines.append("suite            checks   failures")
            for r in found["verify"]["suites"]:
                lines.append(f"{r['suite']:<16} {r['checks']:>7} "
                             f"{len(r['failures']):>9}")
                csv_rows.append(f"verify,{r['suite']},"
                                f"{'pass' if not r['failures'] else 'fail'}")
        if "cubes" in found:
            ax = found["cubes"]["axioms"]
            lines.append("")
            lines.append(f"cube axioms: all_pass={ax['all_pass']} sandwich "
                         f"{ax['sandwich_passed']}/{ax['sandwich_checked']}")
            csv_rows.append(f"cubes,all_pass,{ax['all_pass']}")
        if "space" in found:
            g = found["space"]["growth"]
            lines.append("")
            lines.append(f"growth exponent {g['exponent']:.4f} "
                         f"(constant {g['constant']:.4f})")
            csv_rows.append(f"space,growth_exponent,{g['exponent']!r}")
        if "probe" in found:
            lines.append("")
            lines.append("operator      median      q90      max")
            path = outdir / "probe.csv"
            if path.exists():
                for op, q50, q90, mx in _quantile_rows(path):
                    lines.append(f"{op:<12} {q50:>8.4f} {q90:>8.4f} "
                                 f"{mx:>8.4f}")
                    csv_rows.append(f"probe,{op},{mx!r}")
        if "experiment" in found:
            t = found["experiment"]["tail"]
            lines.append("")
            if t["fitted"]:
                lines.append(
                    f"tail fit ({t['kind']}, threshold {t['threshold']}): "
                    f"c2 {t['c2']:.6f}, R^2 {t['r_squared']:.4f}")
                csv_rows.append(f"experiment,c2,{t['c2']!r}")
            else:
                lines.append("tail fit: not claimed")

    (outdir / "report.txt").write_text("\n".join(lines) + "\n")
    (outdir / "report.csv").write_text(
        "\n".join(["table,key,value"] + csv_rows) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergolab",
        description="build spaces, verify cube systems, probe operators, "
                    "and run ergodic-average experiments from a JSON config")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("space", "build the space and check its geometry"),
            ("cubes", "build the cube system and verify the axioms"),
            ("verify", "run verification suites"),
            ("probe", "randomized operator-norm probes"),
            ("experiment", "tail and convergence experiments"),
            ("report", "render summary tables from a bundle")):
        p = sub.add_parser(name, help=help_text)
        if name != "report":
            p.add_argument("--config", metavar="PATH",
                           help="JSON config file (defaults used if omitted)")
            p.add_argument("--seed", type=int, metavar="U64",
                           help="override the config seed")
            p.add_argument("--threads", type=int, metavar="N",
                           help="advisory worker count, recorded in outputs")
        if name == "verify":
            p.add_argument("--suite", metavar="NAME[,NAME...]",
                           help=f"subset of {','.join(VERIFY_SUITES)}")
        p.add_argument("--out", metavar="DIR",
                       help="output directory (default from config)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "report":
        return cmd_report(Path(args.out or "results"))
    try:
        cfg, sha = load_config(args.config, seed=args.seed, out=args.out,
                               threads=args.threads)
        suites: Sequence[str] = VERIFY_SUITES
        if args.command == "verify" and args.suite:
            suites = tuple(s.strip() for s in args.suite.split(","))
            bad = [s for s in suites if s not in VERIFY_SUITES]
            if bad:
                raise ConfigError(
                    f"unknown suite(s) {bad}; available: {VERIFY_SUITES}")
        outdir = Path(cfg["out"])
        outdir.mkdir(parents=True, exist_ok=True)
        if cfg["threads"] != 1:
            _append_summary(outdir, sha, "threads",
                            [f"threads requested: {cfg['threads']} "
                             f"(suites run sequentially)"])
        if args.command == "space":
            return cmd_space(cfg, sha, outdir)
        if args.command == "cubes":
            return cmd_cubes(cfg, sha, outdir)
        if args.command == "verify":
            return cmd_verify(cfg, sha, outdir, suites)
        if args.command == "probe":
            return cmd_probe(cfg, sha, outdir)
        if args.command == "experiment":
            return cmd_experiment(cfg, sha, outdir)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"ergolab: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
