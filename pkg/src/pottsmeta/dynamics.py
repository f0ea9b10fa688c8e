"""Metropolis single-spin-flip dynamics and first-hitting-time runs.

A step picks a pair (v, s) uniformly among the q*|V| possibilities and
accepts it with probability exp(-beta * max(dH, 0)).  Proposals with
s equal to the current spin are legal and count as steps.

Two runners are provided.  :func:`run_until` is a plain Python loop taking
arbitrary target and observer predicates.  :func:`simulate_hitting` runs a
compiled kernel for the all-1 -> stable transition, either step by step
(``method="metropolis"``, same random stream as :func:`run_until`) or
rejection-free (``method="rejection-free"``), which jumps over rejected and
void proposals with a geometric waiting time and therefore samples the same
law of the hitting time, the visited configurations and the observer flags.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import struct
from typing import BinaryIO, Callable, Mapping, Optional

import numpy as np
from numba import njit

from .lattice import (
    Energy,
    ModelParams,
    SpinConfig,
    energy,
    energy_delta,
    flip,
    neighbor_table,
)
from . import shapes as sh

FRAME = struct.Struct("<QIBB")
INT64_MAX = np.iinfo(np.int64).max


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Independent Philox stream for one replica, a function of (master_seed, replica) only."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(replica,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class ChainState:
    config: SpinConfig
    step_count: int
    rng: np.random.Generator


@dataclass(frozen=True)
class HittingRecord:
    hitting_time: int
    hit_state_class: Optional[object]
    crossed_gate: Optional[bool]
    exited_tube: Optional[bool]
    max_energy_seen: Energy
    seed: int
    replica: int = 0
    truncated: bool = False
    observed: Mapping[str, bool] = field(default_factory=dict)


def acceptance_probability(delta: Energy, params: ModelParams) -> float:
    if delta.key(params) <= 0:
        return 1.0
    return math.exp(-params.beta * params.value(delta))


def _propose(config: SpinConfig, params: ModelParams, rng: np.random.Generator):
    """One proposal: returns (v, s, delta, accepted) using the kernel's draw order."""
    u = int(rng.integers(0, params.q * params.n_sites))
    v, s = divmod(u, params.q)
    s += 1
    if config[v] == s:
        return v, s, Energy(0, 0), False
    delta = energy_delta(config, v, s, params)
    if delta.key(params) <= 0:
        return v, s, delta, True
    return v, s, delta, rng.random() < math.exp(-params.beta * params.value(delta))


def step(state: ChainState, params: ModelParams) -> ChainState:
    """Advance one Metropolis step; the generator in ``state`` is advanced in place."""
    v, s, _, accepted = _propose(state.config, params, state.rng)
    config = flip(state.config, v, s) if accepted else state.config
    return ChainState(config, state.step_count + 1, state.rng)


def stable_target(config: SpinConfig) -> Optional[int]:
    """Hit label for the stable set: the colour s != 1 if the configuration is all-s."""
    first = config[0]
    if first != 1 and (config.spins == first).all():
        return first
    return None


def run_until(
    state: ChainState,
    target: Callable[[SpinConfig], Optional[object]],
    params: ModelParams,
    observers: Optional[Mapping[str, Callable[[SpinConfig], bool]]] = None,
    step_cap: int = 10**6,
    seed: int = 0,
    replica: int = 0,
    frames: Optional[BinaryIO] = None,
) -> HittingRecord:
    """Run until the first t > 0 with ``target(X_t)`` not None.

    Observer flags record whether a predicate held on any visited
    configuration up to the hitting time.  Names ``gate`` and ``tube_exit``
    fill the record's gate and tube fields.
    """
    observers = dict(observers or {})
    flags = {name: bool(pred(state.config)) for name, pred in observers.items()}
    config = state.config
    e = energy(config, params)
    top = e
    t = 0
    hit = None
    while t < step_cap:
        v, s, delta, accepted = _propose(config, params, state.rng)
        t += 1
        if frames is not None:
            frames.write(FRAME.pack(state.step_count + t, v, s, int(accepted)))
        if not accepted:
            continue
        config = flip(config, v, s)
        e = e + delta
        if e.key(params) > top.key(params):
            top = e
        for name, pred in observers.items():
            if not flags[name] and pred(config):
                flags[name] = True
        hit = target(config)
        if hit is not None:
            break
    state.config = config
    state.step_count += t
    return HittingRecord(
        hitting_time=t,
        hit_state_class=hit,
        crossed_gate=flags.get("gate"),
        exited_tube=flags.get("tube_exit"),
        max_energy_seen=top,
        seed=seed,
        replica=replica,
        truncated=hit is None,
        observed=flags,
    )


def read_frames(buf: bytes) -> list[tuple[int, int, int, bool]]:
    return [(t, v, s, bool(a)) for t, v, s, a in FRAME.iter_unpack(buf)]


def detailed_balance_check(params: ModelParams, sample_count: int, seed: int = 0) -> float:
    """Largest |log mu(x) + log P(x,y) - log mu(y) - log P(y,x)| over random single-flip pairs."""
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    rng = np.random.default_rng(seed)
    log_select = -math.log(params.q * params.n_sites)
    worst = 0.0
    for _ in range(sample_count):
        x = SpinConfig(rng.integers(1, params.q + 1, params.n_sites), params.K, params.L)
        v = int(rng.integers(params.n_sites))
        s = int(rng.integers(1, params.q + 1))
        y = flip(x, v, s)
        if y == x:
            continue
        hx = params.value(energy(x, params))
        hy = params.value(energy(y, params))
        lhs = -params.beta * hx + log_select - params.beta * max(hy - hx, 0.0)
        rhs = -params.beta * hy + log_select - params.beta * max(hx - hy, 0.0)
        worst = max(worst, abs(lhs - rhs))
    return worst


# ---------------------------------------------------------------------------
# Compiled kernel


@njit(cache=True)
def _observe(spins, K, L, counts, q, ell, k_star, check_gate, check_tube, crossed, exited):
    non1 = 0
    colors = 0
    fg = 0
    for c in range(2, q + 1):
        if counts[c] > 0:
            colors += 1
            fg = c
            non1 += counts[c]
    if check_gate and not crossed and colors == 1 and non1 == k_star:
        code = sh.shape_code(spins.reshape(K, L), np.int8(1), np.int8(fg))
        g = sh.gate_code(code, ell)
        if g == sh.GATE_G1 or g == sh.GATE_G2:
            crossed = True
    if check_tube and not exited:
        if colors > 1:
            exited = True
        elif colors == 1:
            code = sh.shape_code(spins.reshape(K, L), np.int8(1), np.int8(fg))
            if not sh.tube_code_ok(code, ell, K, L):
                exited = True
    return crossed, exited


@njit(cache=True)
def _hit(counts, q, N, target):
    if target > 0:
        return target if counts[target] == N else 0
    for c in range(2, q + 1):
        if counts[c] == N:
            return c
    return 0


@njit(cache=True)
def _local_delta(spins, nbr, v, s):
    old = spins[v]
    n_old = 0
    n_new = 0
    for k in range(4):
        x = spins[nbr[v, k]]
        if x == old:
            n_old += 1
        elif x == s:
            n_new += 1
    da = n_old - n_new
    db = (1 if s == 1 else 0) - (1 if old == 1 else 0)
    return da, db


@njit(cache=True)
def _refresh_rates(spins, nbr, v, q, beta, h, h_num, h_den, rates, vsum):
    tot = 0.0
    for s in range(1, q + 1):
        if s == spins[v]:
            rates[v, s - 1] = 0.0
            continue
        da, db = _local_delta(spins, nbr, v, s)
        if da * h_den + db * h_num <= 0:
            p = 1.0
        else:
            p = np.exp(-beta * (da + db * h))
        rates[v, s - 1] = p
        tot += p
    vsum[v] = tot


@njit(cache=True, nogil=True)
def _hitting_kernel(
    spins, nbr, K, L, q, beta, h, h_num, h_den, target, step_cap,
    rejection_free, check_gate, check_tube, ell, k_star, gen,
):
    N = K * L
    counts = np.zeros(q + 1, np.int64)
    for v in range(N):
        counts[spins[v]] += 1
    a = 0
    for v in range(N):
        if spins[v] == spins[nbr[v, 1]]:
            a -= 1
        if spins[v] == spins[nbr[v, 2]]:
            a -= 1
    b = counts[1]
    max_a, max_b = a, b
    max_key = a * h_den + b * h_num
    crossed, exited = _observe(spins, K, L, counts, q, ell, k_star, check_gate, check_tube, False, False)

    rates = np.zeros((N, q))
    vsum = np.zeros(N)
    if rejection_free:
        for v in range(N):
            _refresh_rates(spins, nbr, v, q, beta, h, h_num, h_den, rates, vsum)

    t = 0
    while True:
        if rejection_free:
            total = 0.0
            for v in range(N):
                total += vsum[v]
            p = total / (q * N)
            if p <= 0.0:
                return step_cap, 0, crossed, exited, max_a, max_b, True
            wait = gen.geometric(p)
            if wait > step_cap - t:
                return step_cap, 0, crossed, exited, max_a, max_b, True
            t += wait
            # pick a move proportionally to its acceptance probability; if
            # rounding pushes x past the end, the last positive entry is used
            x = gen.random() * total
            v = -1
            for w in range(N):
                if vsum[w] > 0.0:
                    v = w
                    if x < vsum[w]:
                        break
                    x -= vsum[w]
            s = 0
            for c in range(1, q + 1):
                r = rates[v, c - 1]
                if r > 0.0:
                    s = c
                    if x < r:
                        break
                    x -= r
            da, db = _local_delta(spins, nbr, v, s)
        else:
            if t >= step_cap:
                return step_cap, 0, crossed, exited, max_a, max_b, True
            t += 1
            u = gen.integers(0, q * N)
            v = u // q
            s = u % q + 1
            if s == spins[v]:
                continue
            da, db = _local_delta(spins, nbr, v, s)
            if da * h_den + db * h_num > 0:
                if gen.random() >= np.exp(-beta * (da + db * h)):
                    continue
        old = spins[v]
        spins[v] = s
        counts[old] -= 1
        counts[s] += 1
        a += da
        b += db
        key = a * h_den + b * h_num
        if key > max_key:
            max_key = key
            max_a, max_b = a, b
        if rejection_free:
            _refresh_rates(spins, nbr, v, q, beta, h, h_num, h_den, rates, vsum)
            for k in range(4):
                _refresh_rates(spins, nbr, nbr[v, k], q, beta, h, h_num, h_den, rates, vsum)
        crossed, exited = _observe(spins, K, L, counts, q, ell, k_star, check_gate, check_tube, crossed, exited)
        c = _hit(counts, q, N, target)
        if c > 0:
            return t, c, crossed, exited, max_a, max_b, False


def default_step_cap(params: ModelParams) -> int:
    """100 / K_neg * exp(beta * Gamma_m), clipped to the int64 range."""
    ell = params.ell_star
    gamma = 4 * ell - params.h * params.k_star
    theta = 4 * params.n_sites * (2 * ell - 1) * (params.q - 1) / 3
    cap = 100 * theta * math.exp(params.beta * gamma)
    return int(min(cap, INT64_MAX // 2))


METHODS = ("rejection-free", "metropolis")


def simulate_hitting(
    params: ModelParams,
    seed: int,
    replica: int = 0,
    start: Optional[SpinConfig] = None,
    target: int = 0,
    step_cap: Optional[int] = None,
    method: str = "rejection-free",
    observe_gate: bool = True,
    observe_tube: bool = True,
) -> HittingRecord:
    """First hitting time of all-s (any s != 1 when ``target`` is 0) from ``start`` (default all-1)."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if start is None:
        start = SpinConfig.uniform(params.K, params.L, 1)
    cap = default_step_cap(params) if step_cap is None else int(step_cap)
    spins = start.spins.copy()
    gen = replica_rng(seed, replica)
    t, color, crossed, exited, ma, mb, truncated = _hitting_kernel(
        spins, neighbor_table(params.K, params.L), params.K, params.L, params.q,
        float(params.beta), float(params.h), params.h_num, params.h_den, int(target), cap,
        method == "rejection-free", observe_gate, observe_tube,
        params.ell_star, params.k_star, gen,
    )
    return HittingRecord(
        hitting_time=int(t),
        hit_state_class=int(color) if color else None,
        crossed_gate=bool(crossed) if observe_gate else None,
        exited_tube=bool(exited) if observe_tube else None,
        max_energy_seen=Energy(int(ma), int(mb)),
        seed=seed,
        replica=replica,
        truncated=bool(truncated),
    )
