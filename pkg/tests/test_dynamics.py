import io
import math

import numpy as np
import pytest
from scipy import stats

from pottsmeta import oracle
from pottsmeta.dynamics import (
    ChainState,
    _propose,
    acceptance_probability,
    default_step_cap,
    detailed_balance_check,
    read_frames,
    replica_rng,
    run_until,
    simulate_hitting,
    stable_target,
    step,
)
from pottsmeta.lattice import Energy, ModelParams, SpinConfig, energy, flip


def micro(beta, q=3):
    return ModelParams(q, 3, 3, 0.9, beta=beta, relaxed=True)


# -- acceptance rule ---------------------------------------------------------------


def test_downhill_always_accepted():
    p = micro(5.0)
    assert acceptance_probability(Energy(-2, 0), p) == 1.0
    assert acceptance_probability(Energy(0, -1), p) == 1.0
    assert acceptance_probability(Energy(0, 0), p) == 1.0


def test_uphill_at_zero_beta():
    assert acceptance_probability(Energy(4, -1), micro(0.0)) == 1.0


def test_uphill_exponential():
    p = acceptance_probability(Energy(4, -1), micro(1.0))
    assert p == pytest.approx(math.exp(-3.1))
    assert round(p, 4) == 0.0450


def test_step_counts_every_proposal():
    p = micro(2.0)
    state = ChainState(SpinConfig.uniform(3, 3, 1), 0, replica_rng(1, 0))
    for k in range(1, 200):
        state = step(state, p)
        assert state.step_count == k


# -- detailed balance ------------------------------------------------------------------


@pytest.mark.parametrize("beta", [0.0, 0.7, 3.0, 8.0])
def test_detailed_balance(beta):
    p = ModelParams(3, 9, 9, 0.9, beta=beta)
    assert detailed_balance_check(p, 2000, seed=3) < 1e-12


def test_detailed_balance_needs_samples():
    with pytest.raises(ValueError):
        detailed_balance_check(micro(1.0), 0)


def test_transition_matrix_is_reversible(graph2):
    beta = 1.3
    P = oracle.transition_matrix(graph2, beta)
    mu = oracle.gibbs(graph2, beta)
    flux = mu[:, None] * P
    assert np.abs(flux - flux.T).max() < 1e-15
    assert np.allclose(P.sum(axis=1), 1.0)


# -- run_until ----------------------------------------------------------------------------


def test_downhill_entry_at_huge_beta():
    p = micro(200.0)
    start = flip(SpinConfig.uniform(3, 3, 2), 4, 1)
    rec = run_until(ChainState(start, 0, replica_rng(0, 0)), stable_target, p, step_cap=10_000)
    assert not rec.truncated and rec.hit_state_class == 2
    assert rec.hitting_time < 1000


def test_zero_cap_truncates():
    p = micro(1.0)
    start = SpinConfig.uniform(3, 3, 1)
    rec = run_until(ChainState(start, 0, replica_rng(0, 0)), lambda c: None if c == start else 1,
                    p, step_cap=0)
    assert rec.truncated and rec.hitting_time == 0
    sim = simulate_hitting(p, 0, step_cap=0)
    assert sim.truncated and sim.hit_state_class is None


def test_observers_fill_record():
    p = micro(1.0)
    rec = run_until(
        ChainState(SpinConfig.uniform(3, 3, 1), 0, replica_rng(2, 0)), stable_target, p,
        observers={"gate": lambda c: c.count(1) < 9, "tube_exit": lambda c: False},
        step_cap=10**6,
    )
    assert rec.crossed_gate is True and rec.exited_tube is False


def test_frames_replay_audits_incremental_energy():
    p = micro(1.2)
    start = SpinConfig.uniform(3, 3, 1)
    buf = io.BytesIO()
    rec = run_until(ChainState(start, 0, replica_rng(5, 0)), stable_target, p,
                    step_cap=10**6, frames=buf)
    frames = read_frames(buf.getvalue())
    assert len(frames) == rec.hitting_time
    assert [f[0] for f in frames] == list(range(1, rec.hitting_time + 1))
    config, top = start, energy(start, p)
    for _, v, s, accepted in frames:
        if accepted:
            config = flip(config, v, s)
            e = energy(config, p)
            top = max(top, e, key=p.exact)
    assert stable_target(config) == rec.hit_state_class
    assert top == rec.max_energy_seen


# -- compiled kernel --------------------------------------------------------------------


@pytest.mark.parametrize("seed,replica", [(0, 0), (7, 3), (11, 1)])
def test_compiled_metropolis_matches_python(seed, replica):
    p = micro(1.0)
    fast = simulate_hitting(p, seed, replica, method="metropolis", step_cap=10**7)
    slow = run_until(ChainState(SpinConfig.uniform(3, 3, 1), 0, replica_rng(seed, replica)),
                     stable_target, p, step_cap=10**7)
    assert fast.hitting_time == slow.hitting_time
    assert fast.hit_state_class == slow.hit_state_class
    assert fast.max_energy_seen == slow.max_energy_seen


def test_rejection_free_samples_same_law():
    p = micro(1.5)
    n = 400
    a = [simulate_hitting(p, 1, r, method="metropolis").hitting_time for r in range(n)]
    b = [simulate_hitting(p, 2, r, method="rejection-free").hitting_time for r in range(n)]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_reproducible_and_replica_specific():
    p = ModelParams(3, 9, 9, 0.9, beta=2.0)
    r1 = simulate_hitting(p, 42, 3)
    r2 = simulate_hitting(p, 42, 3)
    assert r1 == r2
    assert simulate_hitting(p, 42, 4) != r1


def test_replica_streams_independent_of_order():
    first = replica_rng(9, 5).integers(0, 2**63, 8)
    replica_rng(9, 4).integers(0, 2**63, 100)
    assert np.array_equal(replica_rng(9, 5).integers(0, 2**63, 8), first)
    assert not np.array_equal(replica_rng(9, 6).integers(0, 2**63, 8), first)


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        simulate_hitting(micro(1.0), 0, method="heat-bath")


def test_fixed_target_colour():
    p = micro(1.0)
    for r in range(10):
        rec = simulate_hitting(p, 0, r, target=3)
        assert rec.hit_state_class == 3


def test_default_cap_scale():
    p = ModelParams(3, 9, 9, 0.9, beta=2.0)
    assert default_step_cap(p) == int(100 * 1080 * math.exp(2.0 * 5.7))


# -- empirical kernel against the exact transition matrix ---------------------------------


def test_empirical_transitions_match_kernel(graph3):
    beta = 1.0
    p = micro(beta)
    sigma = SpinConfig.from_grid([[1, 2, 1], [1, 2, 1], [1, 1, 3]])
    i = graph3.encode(sigma)
    nbrs = graph3.neighbors(i)
    u, w, p_uw, p_wu, _ = oracle._kernel_parts(graph3, beta)
    exact = {}
    for x, y, pxy in ((u, w, p_uw), (w, u, p_wu)):
        sel = x == i
        exact.update(zip(y[sel].tolist(), pxy[sel].tolist()))
    exact[i] = 1.0 - sum(exact.values())
    n = 10**6
    rng = replica_rng(123, 0)
    counts = dict.fromkeys(exact, 0)
    for _ in range(n):
        v, s, _, accepted = _propose(sigma, p, rng)
        j = graph3.encode(flip(sigma, v, s)) if accepted else i
        counts[j] += 1
    assert set(counts) == set(nbrs.tolist()) | {i}
    for j, pj in exact.items():
        se = math.sqrt(pj * (1 - pj) / n)
        assert abs(counts[j] / n - pj) <= 3 * se, (j, counts[j] / n, pj)
