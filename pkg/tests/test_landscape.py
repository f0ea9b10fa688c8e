from fractions import Fraction

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from pottsmeta import geometry as geo
from pottsmeta.landscape import (
    PathOfConfigs,
    barrier_comparisons,
    barrier_report,
    brute_force_min_perimeter,
    column_then_expand_path,
    enumerate_gates,
    expansion_path,
    gamma_m,
    min_polyomino_perimeter,
    prefactor,
    prefactor_from_counts,
    reference_path,
    stable_barrier,
)
from pottsmeta.lattice import (
    ConfigurationError,
    Energy,
    ModelParams,
    SpinConfig,
    critical_length,
    energy,
    energy_delta,
    energy_of_grid,
)


@pytest.fixture(scope="module")
def counts(big):
    return prefactor_from_counts(big)


# -- closed forms -----------------------------------------------------------------


def test_critical_length_examples():
    assert critical_length(0.9) == 3 and critical_length(0.3) == 7
    with pytest.raises(ConfigurationError):
        critical_length(0.5)


@pytest.mark.parametrize("h,K,value", [(0.9, 9, Fraction(57, 10)), (0.3, 21, Fraction(151, 10))])
def test_gamma_m_values(h, K, value):
    p = ModelParams(2, K, K, h)
    assert p.exact(gamma_m(p)) == value


@pytest.mark.parametrize("h", [0.9, 0.7, 0.45, 0.3, 0.21, 0.13, 0.07])
def test_gamma_m_exceeds_two(h):
    p = ModelParams(2, 3, 3, h, relaxed=True)
    assert p.exact(gamma_m(p)) > 2


def test_stable_barrier_values(big):
    assert big.exact(stable_barrier(big)) == 20
    assert ModelParams(3, 9, 12, 0.9).exact(stable_barrier(ModelParams(3, 9, 12, 0.9))) == 20
    micro = ModelParams(3, 3, 3, 0.9, relaxed=True)
    assert micro.exact(stable_barrier(micro)) == 8
    assert not barrier_report(micro).in_regime


def test_prefactor_values(big):
    assert prefactor(big) == (Fraction(1, 1080), Fraction(1080))
    assert prefactor(ModelParams(4, 9, 9, 0.9))[0] == Fraction(1, 1620)


def test_barrier_report_consistency(big):
    rep = barrier_report(big)
    assert rep.theta * rep.prefactor == 1
    assert (rep.ell_star, rep.k_star, rep.gate_g1, rep.gate_g2) == (3, 7, 1296, 648)
    d = rep.as_dict(big)
    assert d["gamma_m"] == pytest.approx(5.7) and d["K_neg"] == "1/1080"


@pytest.mark.parametrize("q,K,L,h", [(3, 9, 9, 0.9), (3, 12, 12, 0.6), (2, 9, 15, 0.9), (4, 21, 21, 0.3)])
def test_barrier_comparisons_in_regime(q, K, L, h):
    p = ModelParams(q, K, L, h)
    c = barrier_comparisons(p)
    assert c["asserted"]
    assert c["gamma_below_stable_barrier"] and c["phi_meta_above_phi_stable"]


def test_barrier_comparisons_out_of_regime():
    c = barrier_comparisons(ModelParams(3, 4, 4, 0.9, relaxed=True))
    assert not c["asserted"] and "violated" in c["note"]


# -- reference path ----------------------------------------------------------------------


def test_reference_path_profile(big):
    path = reference_path(big, 2)
    assert len(path) == 82
    assert all(c.count(2) == i for i, c in enumerate(path.configs))
    assert path.argmax() == [7]
    h1 = energy(SpinConfig.uniform(9, 9, 1), big)
    assert path.height == h1 + gamma_m(big)
    assert path.configs[-1] == SpinConfig.uniform(9, 9, 2)


def test_reference_path_matches_recomputation(big):
    path = reference_path(big, 3, anchor=40)
    for c, e in zip(path.configs, path.energies):
        assert energy(c, big) == e


def test_reference_path_local_maxima(big):
    path = reference_path(big, 2)
    h1 = energy(SpinConfig.uniform(9, 9, 1), big)
    h = big.h_exact
    for ell in range(1, 9):
        i = ell * (ell - 1) + 1
        expected = 4 * ell - h * ell * ell + h * ell - h
        assert big.exact(path.energies[i] - h1) == expected


def test_reference_path_below_gate_before_it(big):
    path = reference_path(big, 2)
    level = path.keys[7]
    assert (path.keys[:7] < level).all()
    assert (path.keys[8:] < level).all()


def test_reference_path_strip_regime_decreasing(big):
    k = reference_path(big, 2).keys
    start = (big.K - 1) ** 2 + 1
    assert (np.diff(k[start:]) <= 0).all()


def test_reference_path_rejects_spin_one(big):
    with pytest.raises(ConfigurationError):
        reference_path(big, 1)


def test_path_requires_single_flips(big):
    a = SpinConfig.uniform(9, 9, 1)
    with pytest.raises(ValueError):
        PathOfConfigs([a, SpinConfig.uniform(9, 9, 2)], big)


# -- gates ---------------------------------------------------------------------------------


def test_gate_enumeration(big, counts):
    level = (energy_of_grid(np.ones((9, 9), dtype=np.int8)) + gamma_m(big)).key(big)
    seen = {}
    for g, label in enumerate_gates(big):
        seen[g.tobytes()] = label
        assert geo.gate_class(SpinConfig.from_grid(g), big) == label
        assert energy_of_grid(g).key(big) == level
    labels = list(seen.values())
    assert labels.count("G1") == 1296 and labels.count("G2") == 648
    assert (counts.g1, counts.g2) == (1296, 648)
    assert counts.energies_ok


def test_gate_neighbour_counts(counts):
    assert counts.n_minus == {"G1": [1], "G2": [1]}
    assert counts.n_plus == {"G1": [1], "G2": [2]}
    assert counts.neighbours_never_level


def test_prefactor_from_counts_exact(big, counts):
    assert counts.theta == Fraction(1080) == 1 / prefactor(big)[0]
    assert counts.theta == Fraction(counts.g1, 2) + Fraction(2 * counts.g2, 3)


# -- expansion and stable-to-stable paths ---------------------------------------------------------


def test_expansion_trivial(big):
    path = expansion_path(SpinConfig.uniform(9, 9, 2), 2, big)
    assert len(path) == 1


def test_expansion_from_single_column(big):
    g = np.full((9, 9), 3, dtype=np.int8)
    g[:, 4] = 2
    start = SpinConfig.from_grid(g)
    path = expansion_path(start, 2, big)
    assert path.configs[-1] == SpinConfig.uniform(9, 9, 2)
    assert path.height == energy(start, big) + Energy(2, 0)


def test_expansion_requires_bridge(big):
    with pytest.raises(ConfigurationError):
        expansion_path(SpinConfig.uniform(9, 9, 3), 2, big)
    with pytest.raises(ConfigurationError):
        expansion_path(SpinConfig.uniform(9, 9, 1), 1, big)


def test_composed_stable_path_height(big):
    path = column_then_expand_path(big, 3, 2)
    assert path.configs[0] == SpinConfig.uniform(9, 9, 3)
    assert path.configs[-1] == SpinConfig.uniform(9, 9, 2)
    h3 = energy(path.configs[0], big)
    assert path.height == h3 + Energy(2 * 9 + 2, 0)


@st.composite
def bridged(draw):
    q = draw(st.integers(2, 4))
    K = draw(st.integers(3, 5))
    L = draw(st.integers(K, 6))
    t = draw(st.integers(2, q))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    g = rng.integers(1, q + 1, (K, L)).astype(np.int8)
    if draw(st.booleans()):
        g[:, draw(st.integers(0, L - 1))] = t
    else:
        g[draw(st.integers(0, K - 1)), :] = t
    return ModelParams(q, K, L, 0.9, relaxed=True), SpinConfig.from_grid(g), t


@settings(max_examples=100, deadline=None)
@given(bridged())
def test_expansion_height_bound(case):
    params, start, t = case
    path = expansion_path(start, t, params)
    assert path.configs[-1] == SpinConfig.uniform(params.K, params.L, t)
    top = energy(start, params) + Energy(2, 0)
    assert (path.keys <= top.key(params)).all()
    for x, y, e0, e1 in zip(path.configs, path.configs[1:], path.energies, path.energies[1:]):
        v = int(np.flatnonzero(x.spins != y.spins)[0])
        assert energy_delta(x, v, y[v], params) == e1 - e0


# -- polyominoes -------------------------------------------------------------------------------


@pytest.mark.parametrize("n", range(1, 11))
def test_polyomino_closed_form_matches_brute_force(n):
    assert brute_force_min_perimeter(n) == min_polyomino_perimeter(n)


def test_polyomino_examples():
    assert min_polyomino_perimeter(1) == 4
    assert brute_force_min_perimeter(4) == 8
    assert brute_force_min_perimeter(7) == 12 == 4 * critical_length(0.9)


def test_polyomino_limits():
    with pytest.raises(ValueError):
        brute_force_min_perimeter(11)
    with pytest.raises(ValueError):
        min_polyomino_perimeter(0)
