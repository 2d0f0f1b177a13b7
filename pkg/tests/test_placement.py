import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_cover_size, brute_force_coverage, reference_greedy

from weakfind.errors import InputError
from weakfind.fem import LoadCase
from weakfind.fixtures import face_load, rectangle_mesh
from weakfind.mesh import cluster_elements
from weakfind.placement import (
    CoverageInstance,
    Neighbourhood,
    SelectionResult,
    format_selection_report,
    greedy_select_loads,
    greedy_select_sensors,
    greedy_select_sensors_with_regions,
    load_coverage,
)
from weakfind.sensitivity import encode_sensing


def test_small_example():
    inst = CoverageInstance({1, 2, 3, 4, 5}, {"A": {1, 2, 3}, "B": {4, 5}, "C": {3, 4}})
    res = greedy_select_sensors(inst)
    assert res.picks == ["A", "B"] and res.new_coverage == [3, 2] and not res.residual


def test_disjoint_singletons_taken_in_id_order():
    inst = CoverageInstance(range(4), {i: {3 - i} for i in (2, 0, 3, 1)})
    assert greedy_select_sensors(inst).picks == [0, 1, 2, 3]


def test_nothing_coverable():
    inst = CoverageInstance({1, 2}, {7: set(), 8: set()})
    res = greedy_select_sensors(inst)
    assert res == SelectionResult([], [], frozenset({1, 2}), 2)


def test_candidate_outside_universe_rejected():
    with pytest.raises(InputError):
        CoverageInstance({1}, {0: {2}})


def test_weighted_prefers_heavy_items():
    inst = CoverageInstance({0, 1, 2}, {"a": {0, 1}, "b": {2}}, weights={0: 1.0, 1: 1.0, 2: 5.0})
    res = greedy_select_sensors(inst)
    assert res.picks == ["b", "a"] and res.new_coverage == [5.0, 2.0] and res.total == 7.0


_instances = st.integers(1, 12).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.dictionaries(st.integers(0, 9), st.frozensets(st.integers(0, n - 1), max_size=n), min_size=1, max_size=7),
    )
)


@settings(max_examples=150, deadline=None)
@given(_instances)
def test_matches_reference_and_bounds(data):
    n, cands = data
    inst = CoverageInstance(range(n), cands)
    res = greedy_select_sensors(inst)
    picks, gains, left = reference_greedy(range(n), cands)
    assert (res.picks, res.new_coverage, set(res.residual)) == (picks, gains, left)
    # every prefix is within (1 - 1/e) of the best k-subset
    for k in range(1, len(picks) + 1):
        opt = brute_force_coverage(range(n), cands, k)
        assert sum(gains[:k]) >= (1 - 1 / math.e) * opt - 1e-12
    # the full cover is at most H(n) times the smallest one
    if picks:
        assert len(picks) <= brute_force_cover_size(range(n), cands) * (1 + math.log(n))


def test_from_code():
    sensed = np.array([[1, 0, 1], [0, 0, 1], [1, 1, 0]], bool)
    inst = CoverageInstance.from_code(encode_sensing(sensed), [10, 20, 30], cluster_ids=[5, 6, 7])
    assert inst.candidates == {10: {5, 7}, 20: {7}, 30: {5, 6}}
    assert greedy_select_sensors(inst).picks == [10, 30]


@pytest.fixture(scope="module")
def grid():
    m = rectangle_mesh(6, 4, 6.0, 4.0)
    cl = cluster_elements(m, min_elements=4)
    return m, cl


def _centre(mesh, cluster):
    return mesh.centroids[list(cluster.element_ids)].mean(axis=0)


def test_region_aware_whole_mesh_equals_plain(grid):
    m, cl = grid
    gen = np.random.default_rng(5)
    ids = [c.cluster_id for c in cl]
    cands = {s: {i for i in ids if gen.random() < 0.4} for s in range(6)}
    pos = {s: m.centroids[gen.integers(m.n_elements)] for s in cands}
    inst = CoverageInstance(ids, cands)
    big = Neighbourhood("elements", m.n_elements)
    assert greedy_select_sensors_with_regions(inst, m, cl, pos, big) == greedy_select_sensors(inst)
    assert greedy_select_sensors_with_regions(inst, m, cl, pos, Neighbourhood("radius", 100.0)) == \
        greedy_select_sensors(inst)


def test_region_aware_keeps_picking(grid):
    m, cl = grid
    ids = [c.cluster_id for c in cl]
    # sensor 0 notices everything, the others only their own cluster
    cands = {0: set(ids)} | {c.cluster_id + 1: {c.cluster_id} for c in cl}
    pos = {0: _centre(m, cl[0])} | {c.cluster_id + 1: _centre(m, c) for c in cl}
    inst = CoverageInstance(ids, cands)
    assert greedy_select_sensors(inst).picks == [0]
    res = greedy_select_sensors_with_regions(inst, m, cl, pos, Neighbourhood("radius", 1.5))
    assert res.picks[0] == 0 and len(res.picks) > 1
    assert not res.residual


def test_region_candidate_needs_position(grid):
    m, cl = grid
    inst = CoverageInstance([0], {1: {0}})
    with pytest.raises(InputError, match="position"):
        greedy_select_sensors_with_regions(inst, m, cl, {}, Neighbourhood("elements", 3))


def test_neighbourhood_kinds(grid):
    m, _ = grid
    x = m.centroids[10]
    assert Neighbourhood("elements", 1).elements(m, x).tolist() == [10]
    assert len(Neighbourhood("elements", 5).elements(m, x)) == 5
    v = Neighbourhood("volume", 3 * m.volumes[0]).elements(m, x)
    assert len(v) == 3 and v[0] == 10
    r = Neighbourhood("radius", 0.8).elements(m, x)
    assert set(r) == set(np.flatnonzero(np.linalg.norm(m.centroids - x, axis=1) <= 0.8))
    with pytest.raises(InputError):
        Neighbourhood("elements", 0)
    with pytest.raises(InputError):
        Neighbourhood("sphere", 1.0)


def test_single_load_selected_iff_it_covers(strip, mat):
    real = face_load(strip, 0, 6.0, (1e5, 0, 0), 1)
    res = greedy_select_loads(strip, mat, [real], s0=1e-12)
    assert res.picks == [1] and res.covered == pytest.approx(strip.volumes.sum())
    null = LoadCase(2, {})
    assert greedy_select_loads(strip, mat, [null], s0=1e-12).picks == []
    assert greedy_select_loads(strip, mat, [real], s0=1.0).picks == []


def test_duplicate_load_not_selected_twice(strip, mat):
    a = face_load(strip, 0, 6.0, (0, -1e5, 0), 1)
    b = face_load(strip, 0, 6.0, (0, -1e5, 0), 2)
    res = greedy_select_loads(strip, mat, [a, b], s0=1e-9, measure="count")
    assert res.picks == [1]


def test_load_coverage_threshold(strip, mat):
    loads = [face_load(strip, 0, 6.0, (1e5, 0, 0), 1), face_load(strip, 0, 6.0, (0, -1e5, 0), 2)]
    lo = load_coverage(strip, mat, loads, 1e-12)
    hi = load_coverage(strip, mat, loads, 1e-8)
    assert all(hi[i] <= lo[i] for i in (1, 2))
    assert load_coverage(strip, mat, loads, 1e-12, threads=2) == lo


def test_load_selection_errors(strip, mat):
    ld = face_load(strip, 0, 6.0, (1e5, 0, 0), 1)
    with pytest.raises(InputError, match="duplicate"):
        greedy_select_loads(strip, mat, [ld, ld], 1e-12)
    with pytest.raises(InputError, match="measure"):
        greedy_select_loads(strip, mat, [ld], 1e-12, measure="area")


def test_report_format():
    res = SelectionResult(["s3", "s1"], [3, 1], frozenset({9}), 5)
    assert format_selection_report(res) == (
        "rank,candidate,new_coverage,cumulative_coverage_fraction\n1,s3,3,0.6\n2,s1,1,0.8\n"
    )
    weighted = SelectionResult([4], [0.25], frozenset(), 0.5)
    assert format_selection_report(weighted).splitlines()[1] == "1,4,0.25,0.5"
