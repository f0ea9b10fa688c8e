"""Closed-form landscape quantities, constructive paths and gate counting.

Energies are exact :class:`~pottsmeta.lattice.Energy` pairs; every
comparison goes through integer keys or rationals, never floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
import math
from typing import Iterator, Optional, Sequence

import numpy as np

from .lattice import (
    ConfigurationError,
    Energy,
    ModelParams,
    SpinConfig,
    critical_length,
    energy,
    energy_delta,
    energy_of_grid,
    neighbor_table,
)
from . import shapes as sh

__all__ = [
    "critical_length",
    "gamma_m",
    "stable_barrier",
    "PathOfConfigs",
    "reference_path",
    "expansion_path",
    "column_then_expand_path",
    "min_polyomino_perimeter",
    "brute_force_min_perimeter",
    "prefactor",
    "enumerate_gates",
    "GateCounts",
    "prefactor_from_counts",
    "BarrierReport",
    "barrier_report",
    "barrier_comparisons",
]


def gamma_m(params: ModelParams) -> Energy:
    """Barrier from all-1 to the stable set: 4*ell - h*(ell*(ell-1)+1)."""
    return Energy(4 * params.ell_star, -params.k_star)


def stable_barrier(params: ModelParams) -> Energy:
    """Barrier between two stable states: 2*min(K, L) + 2 (field-free)."""
    return Energy(2 * min(params.K, params.L) + 2, 0)


# ---------------------------------------------------------------------------
# Paths


class PathOfConfigs:
    """Sequence of configurations, consecutive ones differing in at most one site."""

    def __init__(self, configs: Sequence[SpinConfig], params: ModelParams):
        if not configs:
            raise ValueError("a path needs at least one configuration")
        for x, y in zip(configs, configs[1:]):
            if int(np.count_nonzero(x.spins != y.spins)) > 1:
                raise ValueError("consecutive configurations differ in more than one site")
        self.configs = list(configs)
        self.params = params
        e = energy(self.configs[0], params)
        profile = [e]
        for x, y in zip(self.configs, self.configs[1:]):
            diff = np.flatnonzero(x.spins != y.spins)
            if diff.size:
                v = int(diff[0])
                e = e + energy_delta(x, v, int(y.spins[v]), params)
            profile.append(e)
        self.energies = profile

    def __len__(self) -> int:
        return len(self.configs)

    @property
    def keys(self) -> np.ndarray:
        return np.array([e.key(self.params) for e in self.energies], dtype=np.int64)

    @property
    def height(self) -> Energy:
        return self.energies[int(np.argmax(self.keys))]

    def argmax(self) -> list[int]:
        k = self.keys
        return [int(i) for i in np.flatnonzero(k == k.max())]

    def __add__(self, other: "PathOfConfigs") -> "PathOfConfigs":
        rest = other.configs[1:] if other.configs[0] == self.configs[-1] else other.configs
        return PathOfConfigs(self.configs + rest, self.params)


def _paint_order(params: ModelParams) -> list[tuple[int, int]]:
    """Order in which the reference path paints sites, relative to the anchor.

    The droplet alternates between squares and quasi-squares: a square
    a x a gains a column on its right (top to bottom), a quasi-square
    a x (a+1) gains a row below it (left to right).  Growth stops at the
    (K-1) x (K-1) square; then row K-1 is filled, closing a vertical strip
    of width K-1, and the remaining columns are filled top to bottom.
    """
    K, L = params.K, params.L
    order = [(0, 0)]
    rows, cols = 1, 1
    while not (rows == cols == K - 1):
        if rows == cols:
            order += [(i, cols) for i in range(rows)]
            cols += 1
        else:
            order += [(rows, j) for j in range(cols)]
            rows += 1
    order += [(K - 1, j) for j in range(K - 1)]
    for j in range(K - 1, L):
        order += [(i, j) for i in range(K)]
    return order


def reference_path(params: ModelParams, s: int, anchor: int = 0) -> PathOfConfigs:
    """Path from all-1 to all-s through squares and quasi-squares of spin s.

    The i-th configuration has exactly i spins equal to s.
    """
    if s == 1 or not 2 <= s <= params.q:
        raise ConfigurationError("the target spin must be in 2..q")
    K, L = params.K, params.L
    i0, j0 = divmod(anchor, L)
    g = np.ones((K, L), dtype=np.int8)
    configs = [SpinConfig(g, K, L)]
    for di, dj in _paint_order(params):
        g[(i0 + di) % K, (j0 + dj) % L] = s
        configs.append(SpinConfig(g, K, L))
    return PathOfConfigs(configs, params)


def _vertical_bridge(g: np.ndarray, t: int) -> Optional[int]:
    full = np.flatnonzero((g == t).all(axis=0))
    return int(full[0]) if full.size else None


def expansion_path(config: SpinConfig, t: int, params: ModelParams) -> PathOfConfigs:
    """Flood a configuration with spin t starting from a t-bridge.

    Columns to the right of a vertical bridge are painted one at a time,
    top to bottom (rows below a horizontal bridge when only that exists).
    For t != 1 the height is at most H(start) + 2.
    """
    if t == 1:
        raise ConfigurationError("expansion is defined for t != 1; spin 1 pays the field")
    g = config.grid().copy()
    transposed = False
    c = _vertical_bridge(g, t)
    if c is None:
        c = _vertical_bridge(g.T, t)
        if c is None:
            raise ConfigurationError(f"configuration has no {t}-bridge")
        g = g.T.copy()
        transposed = True
    R, C = g.shape
    configs = [config]
    for dj in range(1, C):
        j = (c + dj) % C
        for i in range(R):
            if g[i, j] != t:
                g[i, j] = t
                grid = g.T if transposed else g
                configs.append(SpinConfig(grid, config.K, config.L))
    return PathOfConfigs(configs, params)


def column_then_expand_path(params: ModelParams, r: int, s: int, column: int = 0) -> PathOfConfigs:
    """Stable-to-stable path: paint one column of all-r with s, then expand s."""
    if r == s or 1 in (r, s):
        raise ConfigurationError("need two distinct spins different from 1")
    K, L = params.K, params.L
    g = np.full((K, L), r, dtype=np.int8)
    configs = [SpinConfig(g, K, L)]
    for i in range(K):
        g[i, column] = s
        configs.append(SpinConfig(g, K, L))
    return PathOfConfigs(configs, params) + expansion_path(configs[-1], s, params)


# ---------------------------------------------------------------------------
# Polyominoes


def min_polyomino_perimeter(n: int) -> int:
    """Least perimeter of an n-cell polyomino: 2*ceil(2*sqrt(n))."""
    if n < 1:
        raise ValueError("area must be positive")
    return 2 * (math.isqrt(4 * n - 1) + 1)


def _normalize(cells: frozenset) -> frozenset:
    mi = min(i for i, _ in cells)
    mj = min(j for _, j in cells)
    return frozenset((i - mi, j - mj) for i, j in cells)


def _perimeter(cells: frozenset) -> int:
    return sum(
        (i + di, j + dj) not in cells
        for i, j in cells
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
    )


def brute_force_min_perimeter(n: int) -> int:
    """Minimum perimeter over all fixed polyominoes of area n (n <= 10)."""
    if not 1 <= n <= 10:
        raise ValueError("brute force is limited to 1 <= n <= 10")
    level = {frozenset([(0, 0)])}
    for _ in range(n - 1):
        nxt = set()
        for poly in level:
            for i, j in poly:
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    cell = (i + di, j + dj)
                    if cell not in poly:
                        nxt.add(_normalize(poly | {cell}))
        level = nxt
    return min(_perimeter(p) for p in level)


# ---------------------------------------------------------------------------
# Prefactor and gates


def prefactor(params: ModelParams) -> tuple[Fraction, Fraction]:
    """(K_neg, Theta) with K_neg = 3 / (4 (2 ell - 1) (q - 1) |Lambda|) and Theta = 1/K_neg."""
    k = Fraction(3, 4 * (2 * params.ell_star - 1) * (params.q - 1) * params.n_sites)
    return k, 1 / k


def enumerate_gates(params: ModelParams) -> Iterator[tuple[np.ndarray, str]]:
    """All critical droplets with the protuberance on a long side, labelled G1 or G2.

    Covers every non-1 spin, both orientations, both long sides, every
    protuberance position and every translation of the torus.
    """
    ell = params.ell_star
    K, L = params.K, params.L
    for s in range(2, params.q + 1):
        for side in sh.SIDES:
            for top in range(K):
                for left in range(L):
                    for offset in range(ell):
                        g = sh.rect_bar_grid(K, L, 1, s, top, left, ell - 1, ell, 1, side, offset)
                        yield g, "G1" if offset in (0, ell - 1) else "G2"


@dataclass(frozen=True)
class GateCounts:
    g1: int
    g2: int
    theta: Fraction
    n_minus: dict = field(default_factory=dict)
    n_plus: dict = field(default_factory=dict)
    energies_ok: bool = True
    neighbours_never_level: bool = True


def _neighbour_grids(g: np.ndarray, q: int, nbr: np.ndarray) -> Iterator[tuple[np.ndarray, int, int]]:
    """Yield (grid, da, db) for every single flip of g, with the energy change da + db*h."""
    flat = g.ravel()
    for v in range(flat.size):
        old = int(flat[v])
        around = flat[nbr[v]]
        n_old = int(np.count_nonzero(around == old))
        for s in range(1, q + 1):
            if s != old:
                flat[v] = s
                yield g, n_old - int(np.count_nonzero(around == s)), int(s == 1) - int(old == 1)
        flat[v] = old


def prefactor_from_counts(params: ModelParams) -> GateCounts:
    """Theta as a sum over gate configurations of N- N+ / (N- + N+).

    N- counts single-flip neighbours that are (ell-1) x ell quasi-squares;
    N+ counts those that are quasi-squares with a two-site bar on a long
    side.  Also checks that each gate has energy H(1) + Gamma and that no
    neighbour sits at exactly that level.
    """
    ell, K, L = params.ell_star, params.K, params.L
    base = energy_of_grid(np.ones((K, L), dtype=np.int8))
    level = (base + gamma_m(params)).key(params)
    nbr = neighbor_table(K, L)
    seen = set()
    theta = Fraction(0)
    counts = {"G1": 0, "G2": 0}
    n_minus: dict[str, set] = {"G1": set(), "G2": set()}
    n_plus: dict[str, set] = {"G1": set(), "G2": set()}
    energies_ok = True
    never_level = True
    for g, label in enumerate_gates(params):
        tag = g.tobytes()
        if tag in seen:
            continue
        seen.add(tag)
        counts[label] += 1
        if energy_of_grid(g).key(params) != level:
            energies_ok = False
        s = int(g.max())
        nm = npl = 0
        for nb, da, db in _neighbour_grids(g, params.q, nbr):
            if da * params.h_den + db * params.h_num == 0:
                never_level = False
            if int(nb.max()) != s or int(nb.min()) != 1:
                continue
            code = sh.shape_of(nb, 1, s)
            kind = int(code[0])
            if kind == sh.RECT and sorted((int(code[1]), int(code[2]))) == [ell - 1, ell]:
                nm += 1
            elif (kind == sh.RECT_BAR and int(code[3]) == 2
                  and (int(code[1]), int(code[2])) == (ell - 1, ell)):
                npl += 1
        n_minus[label].add(nm)
        n_plus[label].add(npl)
        theta += Fraction(nm * npl, nm + npl)
    return GateCounts(
        counts["G1"], counts["G2"], theta,
        {k: sorted(v) for k, v in n_minus.items()},
        {k: sorted(v) for k, v in n_plus.items()},
        energies_ok, never_level,
    )


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class BarrierReport:
    ell_star: int
    k_star: int
    gamma_m: Energy
    stable_barrier: Energy
    prefactor: Fraction
    theta: Fraction
    gate_g1: int
    gate_g2: int
    in_regime: bool

    def as_dict(self, params: ModelParams) -> dict:
        return {
            "q": params.q, "K": params.K, "L": params.L, "h": params.h,
            "ell_star": self.ell_star,
            "k_star": self.k_star,
            "gamma_m": params.value(self.gamma_m),
            "gamma_m_exact": str(params.exact(self.gamma_m)),
            "stable_barrier": params.value(self.stable_barrier),
            "K_neg": str(self.prefactor),
            "theta": str(self.theta),
            "gate_G1": self.gate_g1,
            "gate_G2": self.gate_g2,
            "in_regime": self.in_regime,
        }


def barrier_report(params: ModelParams) -> BarrierReport:
    """Closed-form summary; gate counts are 8|V|(q-1) and 4|V|(ell-2)(q-1)."""
    k, theta = prefactor(params)
    n, ell = params.n_sites, params.ell_star
    return BarrierReport(
        ell, params.k_star, gamma_m(params), stable_barrier(params), k, theta,
        8 * n * (params.q - 1), 4 * n * (ell - 2) * (params.q - 1), params.in_regime,
    )


def barrier_comparisons(params: ModelParams) -> dict:
    """Compare the metastable barrier with the stable-to-stable one.

    Returns exact values and the two inequalities; ``asserted`` is False
    outside the regime K >= 3*ell, where the comparison is reported only.
    """
    g = params.exact(gamma_m(params))
    sb = params.exact(stable_barrier(params))
    n = params.n_sites
    # H(1) - H(s) = h * |V|
    phi_meta = params.h_exact * n + g
    return {
        "gamma_m": g,
        "stable_barrier": sb,
        "gamma_below_stable_barrier": g < sb,
        "phi_meta_above_phi_stable": phi_meta > sb,
        "asserted": params.in_regime,
        "note": "" if params.in_regime else "assumption K >= 3*ell_star violated",
    }
