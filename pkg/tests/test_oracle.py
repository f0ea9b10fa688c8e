from fractions import Fraction

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from pottsmeta import oracle as o
from pottsmeta.landscape import reference_path
from pottsmeta.lattice import Energy, ModelParams, SpinConfig, energy


def stable_set(g):
    return [g.uniform(s) for s in range(2, g.params.q + 1)]


# -- graph -----------------------------------------------------------------------------


@pytest.mark.parametrize("q,K,L,n", [(3, 3, 3, 19683), (2, 3, 4, 4096), (4, 3, 3, 262144)])
def test_state_counts(q, K, L, n):
    g = o.build_graph(ModelParams(q, K, L, 0.9, relaxed=True))
    assert g.n_states == n
    u, w = g.edges()
    assert len(u) == n * K * L * (q - 1) // 2


def test_cap_refusal():
    with pytest.raises(o.ResourceCapError, match="states exceeds"):
        o.build_graph(ModelParams(4, 3, 4, 0.9, relaxed=True))


def test_adjacency_symmetric_and_regular(graph3):
    for x in (0, 17, 4242, 19682):
        nb = graph3.neighbors(x)
        assert len(set(nb.tolist())) == 9 * 2
        for y in nb:
            assert x in graph3.neighbors(int(y))
            assert np.count_nonzero(graph3.digits[x] != graph3.digits[y]) == 1


def test_encoding_round_trip_and_energies(graph3, micro3):
    rng = np.random.default_rng(1)
    for x in rng.integers(0, graph3.n_states, 200):
        c = graph3.decode(int(x))
        assert graph3.encode(c) == x
        assert graph3.energy(int(x)) == energy(c, micro3)


# -- communication height ------------------------------------------------------------------


def test_phi_of_a_state_with_itself(graph3):
    for x in (0, 123, 9841):
        assert o.communication_height(graph3, x, x) == graph3.energy(x)


def test_phi_symmetric_between_stable_states(graph3):
    a, b = graph3.uniform(2), graph3.uniform(3)
    assert o.communication_height(graph3, a, b) == o.communication_height(graph3, b, a)


def test_phi_metastable_to_stable(graph3, micro3):
    e = o.communication_height(graph3, graph3.uniform(1), stable_set(graph3))
    assert e == Energy(-10, 5)
    assert micro3.exact(e) == Fraction(-11, 2)
    # upper bound from the reference path restricted to this lattice
    ref = reference_path(micro3, 2)
    assert e.key(micro3) <= ref.height.key(micro3)


def test_two_phi_algorithms_agree_on_random_pairs(graph3):
    rng = np.random.default_rng(2024)
    for _ in range(100):
        x, y = (int(v) for v in rng.integers(0, graph3.n_states, 2))
        assert o.phi_minimax(graph3, x, y) == o.phi_threshold(graph3, x, y)


# -- stability levels -------------------------------------------------------------------------


def test_stable_and_metastable_sets(graph3):
    sl = o.stability_levels(graph3)
    assert sorted(sl.stable) == sorted(stable_set(graph3))
    assert all(sl.V(x) is None for x in sl.stable)
    assert sl.metastable == (graph3.uniform(1),)
    assert sl.V(graph3.uniform(1)) == Fraction(22, 5)


def test_level_two_metastable_set_is_homogeneous(graph3):
    sl = o.stability_levels(graph3)
    x2 = sl.metastable_set_at(2 * graph3.params.h_den)
    assert sorted(x2.tolist()) == sorted(graph3.uniform(s) for s in (1, 2, 3))


def test_stability_histogram(graph3, graph2):
    for g, expected in (
        (graph3, {Fraction(0): 19656, Fraction(1, 10): 12, Fraction(9, 10): 12, Fraction(22, 5): 1}),
        (graph2, {Fraction(0): 504, Fraction(9, 10): 6, Fraction(22, 5): 1}),
    ):
        sl = o.stability_levels(g)
        vals, counts = np.unique(sl.v_keys[sl.v_keys >= 0], return_counts=True)
        assert {g.key_value(int(v)): int(c) for v, c in zip(vals, counts)} == expected


def test_stability_level_by_definition(graph2):
    sl = o.stability_levels(graph2)
    for x in range(graph2.n_states):
        lower = np.flatnonzero(graph2.keys < graph2.keys[x])
        if lower.size == 0:
            assert sl.v_keys[x] < 0
        else:
            assert sl.v_keys[x] == o.phi_minimax(graph2, x, lower) - graph2.keys[x]


# -- cycles ----------------------------------------------------------------------------------


def test_initial_cycle_inside_target_is_singleton(graph3):
    cyc = o.initial_cycle(graph3, graph3.uniform(2), stable_set(graph3))
    assert cyc.states.tolist() == [graph3.uniform(2)]


def test_trivial_cycle_has_zero_depth(graph3):
    x = graph3.encode(SpinConfig.from_grid([[1, 1, 1], [1, 2, 1], [1, 1, 1]]))
    cyc = o.initial_cycle(graph3, x, np.flatnonzero(graph3.keys < graph3.keys[x]))
    assert cyc.states.tolist() == [x]
    assert cyc.trivial and cyc.depth_key == 0
    # strictly downhill exits only
    assert (graph3.keys[cyc.principal_boundary] < graph3.keys[x]).all()


def test_cycles_partition_sublevel_set(graph3):
    theta = int(graph3.keys.min()) + 30
    cycles = o.cycle_decomposition(graph3, theta)
    members = np.concatenate([c.states for c in cycles])
    assert len(set(members.tolist())) == members.size
    assert set(members.tolist()) == set(np.flatnonzero(graph3.keys < theta).tolist())
    for c in cycles:
        assert graph3.keys[c.states].max() < c.boundary_key
        assert (graph3.keys[c.principal_boundary] == c.boundary_key).all() or c.trivial


def test_thin_strip_cycle_exits_by_shrinking(graph3):
    strip = SpinConfig.from_grid([[2, 2, 2], [1, 1, 1], [1, 1, 1]])
    x = graph3.encode(strip)
    lower = np.flatnonzero(graph3.keys < graph3.keys[x])
    cyc = o.initial_cycle(graph3, x, lower)
    # a strict local minimum: a singleton cycle with positive depth
    assert cyc.states.size == 1 and not cyc.trivial
    assert graph3.key_value(cyc.depth_key) == Fraction(9, 10)
    expected = set()
    for j in range(3):
        g = strip.grid().copy()
        g[0, j] = 1
        expected.add(graph3.encode(SpinConfig.from_grid(g)))
    assert set(cyc.principal_boundary.tolist()) == expected


def test_gamma_tilde_dual_characterisation(graph3, graph2):
    everything = np.arange(graph3.n_states)
    s3 = stable_set(graph3)
    cases = [
        (graph3, np.setdiff1d(everything, s3), Fraction(22, 5)),
        (graph3, np.setdiff1d(everything, [graph3.uniform(2)]), Fraction(8)),
        (graph3, s3, Fraction(4)),
        (graph3, [graph3.uniform(1)], Fraction(31, 10)),
        (graph2, np.setdiff1d(np.arange(graph2.n_states), [graph2.uniform(2)]), Fraction(22, 5)),
        (graph2, [graph2.uniform(2)], Fraction(49, 10)),
    ]
    for g, A, expected in cases:
        assert o.gamma_tilde_by_barriers(g, A) == o.gamma_tilde_by_cycles(g, A)
        assert o.gamma_tilde(g, A) == expected


def test_gamma_tilde_random_sets(graph2):
    rng = np.random.default_rng(8)
    for _ in range(20):
        A = np.flatnonzero(rng.random(graph2.n_states) < rng.uniform(0.05, 0.95))
        if 0 < A.size < graph2.n_states:
            assert o.gamma_tilde_by_barriers(graph2, A) == o.gamma_tilde_by_cycles(graph2, A)


def test_gamma_tilde_of_everything_is_infinite(graph2):
    with pytest.raises(ValueError):
        o.gamma_tilde(graph2, np.arange(graph2.n_states))


# -- saddles and gates --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def saddle_report(graph3):
    return o.saddles_and_gates(graph3, graph3.uniform(1), stable_set(graph3))


def test_saddles_at_communication_height(graph3, saddle_report):
    rep = saddle_report
    assert rep.complete
    assert (len(rep.saddles), len(rep.essential), len(rep.unessential)) == (90, 72, 18)
    assert (graph3.keys[list(rep.saddles)] == rep.phi_key).all()


def test_essential_saddles_form_a_minimal_gate(graph3, saddle_report):
    A, B = graph3.uniform(1), stable_set(graph3)
    ess = list(saddle_report.essential)
    assert o.is_gate(graph3, A, B, ess)
    for k in range(len(ess)):
        assert not o.is_gate(graph3, A, B, ess[:k] + ess[k + 1:])


def test_unessential_saddles_are_not_needed(graph3, saddle_report):
    A, B = graph3.uniform(1), stable_set(graph3)
    assert o.is_gate(graph3, A, B, list(saddle_report.essential))
    assert not o.is_gate(graph3, A, B, list(saddle_report.unessential))


# -- tube ------------------------------------------------------------------------------------


def test_tube_from_inside_target(graph3):
    x = graph3.uniform(3)
    assert o.vtj_tube(graph3, x, stable_set(graph3)).states == frozenset([x])


def test_tube_downhill_basin(graph3):
    sigma = graph3.encode(SpinConfig.from_grid([[2, 2, 2], [2, 1, 2], [2, 2, 2]]))
    A = [graph3.uniform(2)]
    tube = o.vtj_tube(graph3, sigma, A)
    closure, todo = {sigma}, [sigma]
    while todo:
        x = todo.pop()
        for y in graph3.neighbors(x).tolist():
            if graph3.keys[y] < graph3.keys[x] and y not in closure:
                closure.add(y)
                todo.append(y)
    assert tube.states | tube.exits == closure


def test_tube_metastable_to_stable(graph3):
    A = stable_set(graph3)
    tube = o.vtj_tube(graph3, graph3.uniform(1), A)
    assert (len(tube.states), len(tube.cycles), len(tube.exits)) == (529, 463, 2)
    phi = o.phi_minimax(graph3, graph3.uniform(1), A)
    assert graph3.keys[list(tube.states)].max() <= phi


# -- relabelling ---------------------------------------------------------------------------------


def test_relabel_invariance(graph3, saddle_report):
    m = o.relabel_permutation(graph3, {2: 3, 3: 2})
    assert (graph3.keys[m] == graph3.keys).all()
    rng = np.random.default_rng(5)
    for _ in range(30):
        x, y = (int(v) for v in rng.integers(0, graph3.n_states, 2))
        assert o.phi_minimax(graph3, x, y) == o.phi_minimax(graph3, int(m[x]), int(m[y]))
    sl = o.stability_levels(graph3)
    assert (sl.v_keys[m] == sl.v_keys).all()
    assert set(m[list(saddle_report.essential)].tolist()) == set(saddle_report.essential)
    tube = o.vtj_tube(graph3, graph3.uniform(1), stable_set(graph3))
    assert set(m[list(tube.states)].tolist()) == set(tube.states)
    with pytest.raises(ValueError):
        o.relabel_permutation(graph3, {1: 2, 2: 1})


# -- spectral gap and mixing ----------------------------------------------------------------------


def test_gap_at_infinite_temperature(graph2):
    # a uniformly chosen site is resampled with probability 1/2: gap 1/|V|
    assert o.spectral_gap(graph2, 0.0) == pytest.approx(1 / 9, rel=1e-12)


def test_gap_frozen_values(graph2):
    assert o.spectral_gap(graph2, 1.0) == pytest.approx(0.006183232372050631, rel=1e-9)
    assert o.spectral_gap(graph2, 6.0) == pytest.approx(3.0805984241888132e-12, rel=1e-6)


def test_gap_decreases_with_beta(graph2):
    gaps = [o.spectral_gap(graph2, b) for b in np.linspace(0, 6, 13)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_dense_and_sparse_gap_agree(graph2, monkeypatch):
    dense = o.spectral_gap(graph2, 2.0)
    monkeypatch.setattr(o, "EIGEN_DENSE_CAP", 10)
    assert o.spectral_gap(graph2, 2.0) == pytest.approx(dense, rel=1e-6)


def test_gap_matches_transition_matrix(graph2):
    P = o.transition_matrix(graph2, 1.5)
    mu = o.gibbs(graph2, 1.5)
    d = np.sqrt(mu)
    S = d[:, None] * P / d[None, :]
    vals = np.sort(np.linalg.eigvalsh((S + S.T) / 2))
    assert 1 - vals[-2] == pytest.approx(o.spectral_gap(graph2, 1.5), rel=1e-6)


def test_mixing_time(graph2):
    assert o.mixing_time(graph2, 2.0) == 13229
    P = o.transition_matrix(graph2, 2.0)
    mu = o.gibbs(graph2, 2.0)
    Pt = np.linalg.matrix_power(P, 13229)
    Pt1 = np.linalg.matrix_power(P, 13228)
    assert max(o.tv_distance(r, mu) for r in Pt) <= 0.25 < max(o.tv_distance(r, mu) for r in Pt1)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_tv_distance_is_max_event_gap(n, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    best = 0.0
    for mask in range(1 << n):
        sel = [(mask >> k) & 1 == 1 for k in range(n)]
        best = max(best, abs(p[sel].sum() - q[sel].sum()))
    assert o.tv_distance(p, q) == pytest.approx(best, abs=1e-12)


def test_tv_distance_known_values():
    assert o.tv_distance([1, 0], [0, 1]) == 1.0
    assert o.tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert o.tv_distance([0.2, 0.8], [0.5, 0.5]) == pytest.approx(0.3)


def test_eigen_cap(graph3, monkeypatch):
    monkeypatch.setattr(o, "EIGEN_CAP", 100)
    with pytest.raises(o.ResourceCapError):
        o.spectral_gap(graph3, 1.0)


def test_report(graph2):
    rep = o.oracle_report(graph2, beta=2.0)
    assert rep["n_states"] == 512 and rep["metastable_V"] == "22/5"
    assert rep["mixing_time"] == 13229
    assert rep["energies"] == {"1": "-99/10", "2": "-18"}
