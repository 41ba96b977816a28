import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergolab.cubes import (
    AxiomReport,
    BoundaryConstants,
    ConstructionError,
    DyadicSystem,
    HKParams,
    Nets,
    boundary_layer_report,
    build_cubes,
    load_system,
    save_system,
    select_nets,
    system_from_json,
    system_to_json,
    verify_cube_axioms,
)
from ergolab.space import MatrixSpace, build_group_space, random_square_space


@pytest.fixture(scope="module")
def z64():
    space, _ = build_group_space(family="zd", d=1, modulus=64)
    return space


@pytest.fixture(scope="module")
def z512():
    space, _ = build_group_space(family="zd", d=1, modulus=512)
    return space


@pytest.fixture(scope="module")
def z512_system(z512):
    return build_cubes(z512, HKParams())


# ---------------------------------------------------------------------------
# parameters and constants
# ---------------------------------------------------------------------------

class TestHKParams:
    def test_defaults_admissible(self):
        p = HKParams()
        assert p.delta == 36.0 and p.c0 == 1.0 and p.C0 == 2.0
        assert p.a0 == pytest.approx(1 / 3)
        assert p.C1 == 4.0

    def test_admissibility_rejected(self):
        with pytest.raises(ValueError, match=r"18\*C0/delta <= c0"):
            HKParams(delta=35.0)

    def test_c0_below_C0(self):
        with pytest.raises(ValueError):
            HKParams(c0=2.0, C0=2.0)

    def test_delta_above_one(self):
        with pytest.raises(ValueError):
            HKParams(delta=1.0)

    def test_level_bounds_ordered(self):
        with pytest.raises(ValueError):
            HKParams(k_min=3, k_max=1)

    def test_resolve_levels_auto(self, z64):
        levels, notes = HKParams().resolve_levels(z64)
        # resolution 1 -> k=0; diameter 32 -> ceil(log36 32)+1 = 2
        assert levels == [0, 1, 2]
        assert notes == []

    def test_resolve_levels_clips_below_resolution(self, z64):
        with pytest.warns(UserWarning, match="below resolution"):
            levels, notes = HKParams(k_min=-3, k_max=1).resolve_levels(z64)
        assert levels == [0, 1]
        assert len(notes) == 1

    def test_one_point_space(self):
        space = MatrixSpace(np.zeros((1, 1)), label="pt")
        params = HKParams()
        levels, _ = params.resolve_levels(space)
        assert len(levels) == 1
        system = build_cubes(space, params)
        assert [len(c) for c in system.centers] == [1]
        assert verify_cube_axioms(system).all_pass


class TestBoundaryConstants:
    def test_default_values(self):
        c = BoundaryConstants.derive(HKParams(), r0=1.0)
        assert (c.L0, c.L1, c.L2, c.L3) == (1, 2, 1, 165890)
        assert c.eta == pytest.approx(1.1659919441634263e-06, rel=1e-14)
        assert c.C2 == 331776.0
        assert c.C2_prime == 72.0
        assert c.K_eps == 5.0
        assert (c.n0, c.n1, c.k1) == (1, 1, -1)

    def test_eta_formula(self):
        c = BoundaryConstants.derive(HKParams(), r0=1.0)
        assert c.eta == pytest.approx(math.log(2) / (math.log(36) * c.L3))

    @given(r0=st.floats(0.25, 50.0), delta=st.sampled_from([36.0, 40.0, 72.0]))
    def test_thresholds_satisfy_defining_inequalities(self, r0, delta):
        params = HKParams(delta=delta)
        c = BoundaryConstants.derive(params, r0=r0)
        # n1 = least n >= 0 with delta^n >= 2 r0
        assert delta**c.n1 >= 2 * r0
        assert c.n1 == 0 or delta ** (c.n1 - 1) < 2 * r0
        # k1 = greatest k with C1 delta^k <= 1
        assert params.C1 * delta**c.k1 <= 1.0
        assert params.C1 * delta ** (c.k1 + 1) > 1.0

    def test_n0_is_gap(self):
        c = BoundaryConstants.derive(HKParams(), r0=1.0)
        assert c.n0 == max(c.L1 - c.L0, 0)

    @pytest.mark.parametrize("kw", [dict(r0=0.0), dict(r0=1.0, K=0.0),
                                    dict(r0=1.0, eps=0.0), dict(r0=1.0, eps=1.5)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            BoundaryConstants.derive(HKParams(), **kw)


# ---------------------------------------------------------------------------
# nets
# ---------------------------------------------------------------------------

class TestSelectNets:
    def test_separation_and_covering(self, z512):
        params = HKParams()
        nets = select_nets(z512, params)
        for k, cents in zip(nets.levels, nets.centers):
            sep = params.c0 * params.delta**k
            cover = params.C0 * params.delta**k
            cover_min = np.full(z512.n, np.inf)
            for i, c in enumerate(cents):
                row = z512.dist_row(int(c))
                np.minimum(cover_min, row, out=cover_min)
                others = row[cents]
                others[i] = np.inf
                if len(cents) > 1:
                    assert others.min() >= sep
            assert cover_min.max() < cover

    def test_centers_ascending(self, z512):
        nets = select_nets(z512, HKParams())
        for cents in nets.centers:
            assert np.all(np.diff(cents) > 0)

    def test_finest_level_is_everything(self, z64):
        nets = select_nets(z64, HKParams())
        assert len(nets.centers[0]) == z64.n

    def test_scale_above_diameter_single_center(self, z64):
        nets = select_nets(z64, HKParams())
        assert list(nets.centers[-1]) == [0]


# ---------------------------------------------------------------------------
# construction and axioms
# ---------------------------------------------------------------------------

class TestBuildCubes:
    def test_axioms_z64(self, z64):
        report = verify_cube_axioms(build_cubes(z64, HKParams()))
        assert report.all_pass
        assert report.sandwich_passed == report.sandwich_checked
        assert report.violations == ()

    def test_axioms_z512(self, z512_system):
        report = verify_cube_axioms(z512_system)
        assert report.all_pass

    def test_deterministic(self, z512):
        a = build_cubes(z512, HKParams())
        b = build_cubes(z512, HKParams())
        for x, y in zip(a.assign, b.assign):
            assert np.array_equal(x, y)
        for x, y in zip(a.parents, b.parents):
            assert np.array_equal(x, y)

    def test_ball_sandwich_direct(self, z512, z512_system):
        params = z512_system.params
        li = z512_system.level_index(1)
        cube = 3
        center = int(z512_system.centers[li][cube])
        row = z512.dist_row(center)
        members = z512_system.members(1, cube)
        inside = np.nonzero(row <= params.a0 * params.delta)[0]
        assert set(inside).issubset(set(members))
        assert row[members].max() <= params.C1 * params.delta

    def test_no_admissible_parent_raises(self):
        d = np.array([[0.0, 1000.0, 2000.0],
                      [1000.0, 0.0, 1000.0],
                      [2000.0, 1000.0, 0.0]])
        space = MatrixSpace(d, label="spread")
        nets = Nets(levels=(0, 1), centers=(np.arange(3), np.array([0])),
                    notes=())
        with pytest.raises(ConstructionError, match="covering"):
            build_cubes(space, HKParams(), nets)

    def test_membership_corruption_detected(self, z512_system):
        assign = [a.copy() for a in z512_system.assign]
        li = z512_system.level_index(1)
        # teleport one point into a far cube: the sandwich breaks
        victim = int(z512_system.centers[li][0])
        assign[li][victim] = z512_system.assign[li][victim] + 5
        tampered = replace(z512_system, assign=tuple(assign))
        report = verify_cube_axioms(tampered)
        assert not report.all_pass
        axioms = {v.axiom for v in report.violations}
        assert "iv" in axioms or "iii" in axioms or "ii" in axioms

    def test_empty_cube_detected(self, z512_system):
        assign = [a.copy() for a in z512_system.assign]
        li = z512_system.level_index(1)
        assign[li][assign[li] == 0] = 1
        tampered = replace(z512_system, assign=tuple(assign))
        report = verify_cube_axioms(tampered)
        assert not report.partition_ok

    def test_parent_tamper_detected(self, z512_system):
        parents = [p.copy() for p in z512_system.parents]
        li = z512_system.level_index(1)
        parents[li][0] = (parents[li][0] + 1) % len(z512_system.centers[li + 1])
        tampered = replace(z512_system, parents=tuple(parents))
        report = verify_cube_axioms(tampered)
        # either the stored link mismatches, or (with a single coarse cube)
        # the modulus wrapped to the same value and nothing changed
        if not np.array_equal(parents[li], z512_system.parents[li]):
            assert not report.parent_ok

    def test_nesting_tamper_detected(self):
        # needs a level pair where both sides have multiple multi-point
        # cubes; with delta=36 that means a space of diameter >= 36^2
        space, _ = build_group_space(family="zd", d=1, modulus=4096)
        system = build_cubes(space, HKParams(k_max=2))
        li, lj = system.level_index(1), system.level_index(2)
        assert len(system.centers[lj]) >= 2
        assign = [a.copy() for a in system.assign]
        members = system.members(1, 0)
        assign[lj][members[: len(members) // 2]] = (
            system.assign[lj][members[0]] + 1
        ) % len(system.centers[lj])
        tampered = replace(system, assign=tuple(assign))
        report = verify_cube_axioms(tampered)
        assert not report.nesting_ok
        assert any(v.axiom == "ii" for v in report.violations)

    def test_cube_measures_sum_to_total(self, z512_system):
        for k in z512_system.levels:
            measures = z512_system.cube_measures(k)
            assert measures.sum() == pytest.approx(z512_system.space.total_mass())
            assert np.all(measures > 0)

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(5, 40), seed=st.integers(0, 2**20))
    def test_random_spaces_structural_axioms(self, n, seed):
        space = random_square_space(n, 48, seed)
        report = verify_cube_axioms(build_cubes(space, HKParams()))
        assert report.partition_ok and report.nesting_ok and report.parent_ok
        assert report.separation_ok and report.covering_ok


# ---------------------------------------------------------------------------
# boundary layers
# ---------------------------------------------------------------------------

class TestBoundaryLayers:
    @pytest.fixture
    def constants(self):
        return BoundaryConstants.derive(HKParams(), r0=1.0)

    def test_cycle_arc_layers(self, z512, z512_system, constants):
        report = boundary_layer_report(z512_system, z512, constants,
                                       level=1, L=1)
        assert report.t == 1.0
        for row in report.rows:
            # an arc of a cycle touches its complement at two endpoint cells
            assert row.inner == 2.0
            assert row.outer == 2.0

    def test_full_cube_at_coarse_t(self, z512, z512_system, constants):
        report = boundary_layer_report(z512_system, z512, constants,
                                       level=1, L=0)
        for row in report.rows:
            assert row.inner == row.measure

    def test_monotone_in_t(self, z512, z512_system, constants):
        inner = {}
        for L in (2, 1, 0):
            rep = boundary_layer_report(z512_system, z512, constants,
                                        level=1, L=L)
            inner[L] = np.array([r.inner for r in rep.rows])
        assert np.all(inner[2] <= inner[1])
        assert np.all(inner[1] <= inner[0])

    def test_bound_columns(self, z512, z512_system, constants):
        rep = boundary_layer_report(z512_system, z512, constants, level=1, L=1)
        decay = constants.delta ** (-1 * constants.eta)
        for row in rep.rows:
            assert row.inner_bound == pytest.approx(constants.C2 * decay * row.measure)
            assert row.outer_bound == pytest.approx(
                constants.C2 * constants.C2_prime * decay * row.measure)
            assert row.halo_bound == row.inner_bound

    def test_hypothesis_flags(self, z512, z512_system, constants):
        rep = boundary_layer_report(z512_system, z512, constants, level=1, L=1)
        # layer window is L0 < L < level + L0 - L1 = (1, 0): empty
        assert not rep.rows[0].layer_in_range
        # halo window needs level - L > n0 and L > L0
        assert not rep.rows[0].halo_in_range
        # flags follow the formulas; an in-range row needs level >= 4,
        # i.e. diameter >= 36^3, beyond what fits in memory here
        rep2 = boundary_layer_report(z512_system, z512, constants, level=3, L=2)
        assert rep2.rows[0].layer_in_range == (1 < 2 < 3 + 1 - 2)
        assert rep2.rows[0].halo_in_range == ((3 - 2) > 1 and 2 > 1)

    def test_in_range_rows_respect_bound(self, z512, z512_system, constants):
        for L in (0, 1, 2):
            rep = boundary_layer_report(z512_system, z512, constants,
                                        level=1, L=L)
            assert rep.in_range_ok

    def test_cube_subset(self, z512, z512_system, constants):
        rep = boundary_layer_report(z512_system, z512, constants, level=1,
                                    L=1, cubes=[2, 5])
        assert [r.cube for r in rep.rows] == [2, 5]

    def test_singleton_cubes_have_full_layers(self, z64, constants):
        system = build_cubes(z64, HKParams())
        rep = boundary_layer_report(system, z64, constants, level=0, L=0)
        for row in rep.rows:
            # a singleton cube at t = 1 is all boundary
            assert row.inner == row.measure


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

class TestSerialization:
    def test_round_trip(self, z512, z512_system, tmp_path):
        path = tmp_path / "cubes.json"
        save_system(z512_system, path)
        loaded = load_system(path, z512)
        assert loaded.levels == z512_system.levels
        for a, b in zip(loaded.assign, z512_system.assign):
            assert np.array_equal(a, b)
        for a, b in zip(loaded.parents, z512_system.parents):
            assert np.array_equal(a, b)
        for a, b in zip(loaded.centers, z512_system.centers):
            assert np.array_equal(a, b)

    def test_deterministic_bytes(self, z512, z512_system, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_system(z512_system, p1)
        save_system(z512_system, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_wrong_space_rejected(self, z64, z512_system):
        doc = system_to_json(z512_system)
        with pytest.raises(ValueError, match="different space"):
            system_from_json(doc, z64)

    def test_wrong_format_rejected(self, z512):
        with pytest.raises(ValueError, match="not a cube-system"):
            system_from_json({"format": "bogus"}, z512)

    def test_constants_embedded(self, z512_system):
        doc = system_to_json(z512_system)
        assert doc["constants"]["C2"] == 331776.0
        assert doc["constants"]["L3"] == 165890
        json.dumps(doc)  # must be serializable as-is
