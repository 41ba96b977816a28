"""Release gate: every guarantee the package advertises, end to end.

Each test pins the exact tolerance and, where a guarantee includes one, a
runtime budget.  Seeds are fixed so a red test is a broken promise, not a
noisy draw.  Nothing here may be loosened to make a run pass.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from ergolab.cli import main as cli_main
from ergolab.cubes import HKParams, build_cubes, verify_cube_axioms
from ergolab.decomposition import gundy_decompose
from ergolab.dynamics import build_system, tail_experiment, transference_check
from ergolab.martingale import (SampleFunction, differences, tower_check,
                                weighted_norm)
from ergolab.operators import OperatorConfig, domination_check, norm_probe
from ergolab.space import (annular_decay_profile, build_group_space,
                           fit_growth_exponent, random_square_space)
from ergolab.stats import (jump_count, jump_count_oracle, upcrossing_count,
                           variation, variation_oracle)


def default_system(family: str, **kw):
    space, table = build_group_space(family, **kw)
    return build_cubes(space, HKParams()), table


@pytest.fixture(scope="session")
def z64_system():
    return default_system("zd", d=1, modulus=64)[0]


@pytest.fixture(scope="session")
def z512_system():
    return default_system("zd", d=1, modulus=512)[0]


@pytest.fixture(scope="session")
def square_system():
    space = random_square_space(48, 12, 3)
    return build_cubes(space, HKParams(k_min=0))


@pytest.fixture(scope="session")
def z4096_bundle():
    space, _ = build_group_space("zd", d=1, modulus=4096)
    system = build_cubes(space, HKParams())
    return system, OperatorConfig.for_space(space)


class TestOracleAgreement:
    """Fast implementations agree with their brute-force oracles."""

    def test_jump_and_variation_match_oracles(self):
        start = time.monotonic()
        rng = np.random.default_rng(101)
        for i in range(10_000):
            n = int(rng.integers(1, 13))
            vals = (rng.uniform(-1.0, 1.0, size=n) if i % 2 == 0
                    else rng.standard_cauchy(size=n))
            lam = float(rng.uniform(0.05, 2.0))
            assert jump_count(vals, lam) == jump_count_oracle(vals, lam)
        worst = 0.0
        for _ in range(1_000):
            n = int(rng.integers(2, 11))
            vals = rng.uniform(-2.0, 2.0, size=n)
            for q in (1.0, 1.5, 2.0, 3.0):
                err = abs(variation(vals, q) - variation_oracle(vals, q))
                worst = max(worst, err)
        assert worst <= 1e-12
        elapsed = time.monotonic() - start
        assert elapsed <= 60.0, f"oracle sweep took {elapsed:.1f} s"


class TestSequenceDomination:
    """The three pathwise inequalities hold on every random sequence."""

    def test_no_violations_on_ten_thousand_sequences(self):
        rng = np.random.default_rng(202)
        for i in range(10_000):
            n = int(rng.integers(2, 33))
            if i % 3 == 0:
                vals = rng.uniform(-2.0, 2.0, size=n)
            elif i % 3 == 1:
                vals = rng.standard_normal(n)
            else:
                vals = rng.standard_cauchy(size=n)

            lam = float(rng.uniform(0.05, 2.0))
            assert (lam * math.sqrt(jump_count(vals, lam))
                    <= variation(vals, 2.0) + 1e-12)

            q = (1.0, 1.5, 2.0, 3.0)[i % 4]
            assert (np.abs(vals).max()
                    <= abs(vals[0]) + variation(vals, q) + 1e-12)

            a = float(rng.uniform(-1.0, 1.0))
            b = a + float(rng.uniform(0.1, 2.0))
            assert (upcrossing_count(vals, a, b)
                    <= 2 * jump_count(vals, (b - a) / 2))


class TestCubeAxioms:
    """Dyadic systems satisfy their axioms on three geometries."""

    def test_three_spaces_default_params(self):
        start = time.monotonic()
        rates = {}
        for family, kw in (("zd", dict(d=1, modulus=64)),
                           ("zd", dict(d=2, modulus=32)),
                           ("h3", dict(modulus=8))):
            system, _ = default_system(family, **kw)
            rep = verify_cube_axioms(system)
            label = system.space.label
            assert rep.partition_ok, label
            assert rep.nesting_ok, label
            assert rep.parent_ok, label
            assert rep.separation_ok, label
            assert rep.covering_ok, label
            rates[label] = rep.sandwich_passed / max(rep.sandwich_checked, 1)
            assert rep.sandwich_ok_in_safe, (
                f"{label}: sandwich rate {rates[label]:.3f} "
                f"({rep.sandwich_passed}/{rep.sandwich_checked})")
        print("sandwich pass rates:", rates)
        elapsed = time.monotonic() - start
        assert elapsed <= 120.0, f"axiom suite took {elapsed:.1f} s"


class TestMartingaleIdentities:
    def _spaces(self, z64_system, square_system):
        return (z64_system, square_system)

    def test_tower_property_exact(self, z64_system, square_system):
        for system in self._spaces(z64_system, square_system):
            for seed in range(100):
                rng = np.random.default_rng(900 + seed)
                f = SampleFunction(system.space.label,
                                   rng.standard_normal(system.space.n))
                for j in system.levels:
                    for k in system.levels:
                        assert tower_check(f, system, j, k)

    def test_finite_parseval(self, z64_system, square_system):
        for system in self._spaces(z64_system, square_system):
            w = system.space.weights
            for seed in range(100):
                rng = np.random.default_rng(900 + seed)
                f = SampleFunction(system.space.label,
                                   rng.standard_normal(system.space.n))
                parts = differences(f, system)
                assert parts.point_separating
                lhs = weighted_norm(f.values, w, 2) ** 2
                rhs = weighted_norm(parts.remainder.values, w, 2) ** 2 + sum(
                    weighted_norm(d.values, w, 2) ** 2 for d in parts.diffs)
                assert abs(lhs - rhs) <= 1e-10 * lhs


class TestGundySplit:
    """f = g + b + xi with exact books and the advertised norm bounds."""

    def test_two_hundred_random_splits_per_space(self, z64_system,
                                                 z512_system):
        for system in (z64_system, z512_system):
            space = system.space
            w = space.weights
            coarse = system.assign[system.level_index(system.levels[-1])]
            den = np.bincount(coarse, weights=w)
            for t in range(200):
                rng = np.random.default_rng(5000 + t)
                vals = rng.standard_normal(space.n)
                if t % 4 == 0:
                    vals = np.zeros(space.n)
                    spots = rng.integers(0, space.n, size=3)
                    vals[spots] = rng.uniform(3.0, 9.0, size=3)
                f = SampleFunction(space.label, vals)
                num = np.bincount(coarse, weights=np.abs(vals) * w)
                top = float((num / den).max())
                gamma = float(rng.uniform(1.01, 5.0)) * max(top, 1e-9)

                res = gundy_decompose(f, system, gamma, p=2.0)
                scale = max(res.f_l1, 1e-300)
                assert res.reconstruction_gap <= 1e-12
                assert res.max_part_integral <= 1e-12 * scale
                assert res.b_l1 <= 2.0 * res.f_l1 * (1 + 1e-9)
                assert res.xi_l1 <= 4.0 * res.f_l1 * (1 + 1e-9)
                explicit = 3.0 * 2.0**2 * math.sqrt(6.0) * gamma * res.f_l1
                assert res.g_bound == pytest.approx(explicit, rel=1e-12)
                assert res.g_p_power <= explicit * (1 + 1e-9)
                assert res.bounds_ok


class TestPointwiseDomination:
    """Both pointwise jump-transfer inequalities hold at every point."""

    def test_no_violations_on_large_cyclic_space(self, z4096_bundle):
        system, config = z4096_bundle
        n = system.space.n
        for seed in range(100):
            rng = np.random.default_rng(7000 + seed)
            f = SampleFunction(system.space.label, rng.standard_normal(n))
            for lam in (0.1, 0.5, 1.0):
                rep = domination_check(f, system, config, lam)
                assert rep.violations_anchor.size == 0, (seed, lam)
                assert rep.violations_martingale.size == 0, (seed, lam)


class TestTransference:
    """Averages along the regular action equal plain ball averages."""

    def test_action_equals_translation(self):
        radii = [float(r) for r in range(1, 9)]
        for family, kw in (("h3", dict(modulus=4)),
                           ("zd", dict(d=1, modulus=64))):
            space, _ = build_group_space(family, **kw)
            for seed in range(50):
                rng = np.random.default_rng(3300 + seed)
                vals = rng.standard_normal(space.n)
                rep = transference_check(space, vals, radii, lam=0.5)
                assert rep.max_discrepancy <= 1e-12
                assert rep.jumps_equal


class TestGeometry:
    def test_line_ball_volumes_exact(self):
        _, table = build_group_space("zd", d=1, radius=256)
        assert all(table.volume(r) == 2 * r + 1 for r in range(0, 257))

    def test_growth_exponents(self):
        _, t2 = build_group_space("zd", d=2, radius=24)
        d2, _ = fit_growth_exponent(t2)
        assert 1.8 <= d2 <= 2.2
        _, t3 = build_group_space("h3", radius=24)
        d3, _ = fit_growth_exponent(t3)
        assert 3.7 <= d3 <= 4.3

    def test_line_annular_constant_exhaustive(self):
        space, _ = build_group_space("zd", d=1, radius=256)
        rep = annular_decay_profile(space, [0],
                                    [float(r) for r in range(2, 65)],
                                    [float(s) for s in range(1, 65)],
                                    eps=1.0)
        assert rep.K_hat <= 1.0 + 1e-12
        assert rep.two_sided_ok

    def test_square_function_probe_stable_across_sizes(self):
        ratios = {}
        for modulus in (256, 512):
            space, _ = build_group_space("zd", d=1, modulus=modulus)
            system = build_cubes(space, HKParams())
            config = OperatorConfig.for_space(space)
            rep = norm_probe(system, config, "square", p=2.0,
                             trials=200, seed=17)
            ratios[modulus] = rep.strong_max
        a, b = ratios[256], ratios[512]
        assert a > 0 and b > 0
        assert abs(a - b) / a < 0.20, f"probe ratios {ratios}"


class TestTailDecay:
    def test_rotation_with_balanced_signs(self):
        system = build_system("rotation", modulus=1024, step=1)
        rng = np.random.default_rng(5)
        vals = rng.permutation(np.repeat([-1.0, 1.0], 512))
        rep = tail_experiment(system, vals,
                              [float(r) for r in range(1, 257)], lam=0.5)
        tails = list(rep.tails)
        assert all(b <= a for a, b in zip(tails, tails[1:]))
        assert tails[0] < 1.0
        assert sum(t > 0 for t in tails) >= 3
        assert rep.slope < 0, f"slope {rep.slope}, R^2 {rep.r_squared}"
        assert 0.0 <= rep.r_squared <= 1.0
        assert rep.decay_claimed, f"R^2 {rep.r_squared}"
        print(f"tail fit: slope {rep.slope:.3f}, R^2 {rep.r_squared:.3f}")


class TestByteDeterminism:
    """Identical configs reproduce every artifact byte for byte."""

    CONFIG = {
        "seed": 11,
        "space": {"modulus": 64},
        "probe": {"trials": 3},
        "domination": {"trials": 1, "lambdas": [0.5]},
        "gundy": {"trials": 2, "gamma_factors": [1.5]},
        "transference": {"radii": [1.0, 2.0, 4.0], "lambda": 0.5},
        "experiment": {"modulus": 64,
                       "radii": {"start": 1.0, "stop": 16.0, "step": 1.0}},
    }

    def _run_everything(self, cfg: str, out: Path) -> dict[str, str]:
        for cmd in ("space", "cubes", "verify", "probe", "experiment"):
            assert cli_main([cmd, "--config", cfg, "--out", str(out)]) == 0
        assert cli_main(["report", "--out", str(out)]) == 0
        return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(out.iterdir())}

    def test_cli_rerun_is_bitwise_identical(self, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(self.CONFIG, indent=1))
        first = self._run_everything(str(cfg_path), tmp_path / "one")
        second = self._run_everything(str(cfg_path), tmp_path / "two")
        assert first.keys() == second.keys()
        assert first == second
