"""Exhaustive analysis of micro instances.

Every configuration is an integer in mixed radix q (digit at site v is
spin - 1, weight q**v).  Energies are stored as integer keys
``a*h_den + b*h_num``, which order energies exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
import heapq
from typing import Optional

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .lattice import Energy, ModelParams, SpinConfig, neighbor_table

STATE_CAP = 10**6
EIGEN_DENSE_CAP = 4096
EIGEN_CAP = 300_000
INF_KEY = np.iinfo(np.int64).max


class ResourceCapError(RuntimeError):
    """The requested exhaustive computation exceeds its configured size cap."""


# ---------------------------------------------------------------------------
# Graph


@dataclass
class LandscapeGraph:
    params: ModelParams
    n_states: int
    powers: np.ndarray
    digits: np.ndarray  # (n_states, N) spin - 1
    a: np.ndarray
    b: np.ndarray
    keys: np.ndarray
    _edges: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    _csr: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    # -- encoding ---------------------------------------------------------
    def encode(self, config: SpinConfig) -> int:
        return int(((config.spins.astype(np.int64) - 1) * self.powers).sum())

    def decode(self, index: int) -> SpinConfig:
        p = self.params
        return SpinConfig(self.digits[index] + 1, p.K, p.L)

    def uniform(self, s: int) -> int:
        return int((s - 1) * self.powers.sum())

    def energy(self, index: int) -> Energy:
        return Energy(int(self.a[index]), int(self.b[index]))

    def key_energy(self, key: int) -> Energy:
        """Energy of some state with the given key (all such states have the same value)."""
        hit = np.flatnonzero(self.keys == key)
        if hit.size == 0:
            raise KeyError(key)
        return self.energy(int(hit[0]))

    def key_value(self, key: int) -> Fraction:
        return Fraction(int(key), self.params.h_den)

    # -- adjacency --------------------------------------------------------
    def neighbors(self, index: int) -> np.ndarray:
        d = self.digits[index].astype(np.int64)
        q = self.params.q
        out = []
        for shift in range(1, q):
            out.append(index + ((d + shift) % q - d) * self.powers)
        return np.concatenate(out)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Undirected single-flip edges (u < w), each listed once."""
        if self._edges is None:
            q = self.params.q
            x = np.arange(self.n_states, dtype=np.int64)
            us, ws = [], []
            for v, pw in enumerate(self.powers):
                d = self.digits[:, v].astype(np.int64)
                for shift in range(1, q):
                    y = x + ((d + shift) % q - d) * pw
                    keep = x < y
                    us.append(x[keep])
                    ws.append(y[keep])
            self._edges = (np.concatenate(us), np.concatenate(ws))
        return self._edges

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) of the symmetric adjacency."""
        if self._csr is None:
            u, w = self.edges()
            src = np.concatenate([u, w])
            dst = np.concatenate([w, u])
            order = np.argsort(src, kind="stable")
            indptr = np.zeros(self.n_states + 1, dtype=np.int64)
            np.add.at(indptr, src + 1, 1)
            self._csr = (np.cumsum(indptr), dst[order])
        return self._csr

    def edge_weights(self) -> np.ndarray:
        u, w = self.edges()
        return np.maximum(self.keys[u], self.keys[w])


def build_graph(params: ModelParams, cap: int = STATE_CAP) -> LandscapeGraph:
    """Enumerate all q**(K*L) configurations with their exact energies."""
    N = params.n_sites
    n_states = params.q**N
    if n_states > cap:
        raise ResourceCapError(f"{params.q}^{N} = {n_states} states exceeds the cap {cap}")
    powers = params.q ** np.arange(N, dtype=np.int64)
    idx = np.arange(n_states, dtype=np.int64)
    digits = ((idx[:, None] // powers[None, :]) % params.q).astype(np.int8)
    nbr = neighbor_table(params.K, params.L)
    agree = np.zeros(n_states, dtype=np.int64)
    for k in (1, 2):
        agree += (digits == digits[:, nbr[:, k]]).sum(axis=1)
    a = -agree
    b = (digits == 0).sum(axis=1).astype(np.int64)
    keys = a * params.h_den + b * params.h_num
    return LandscapeGraph(params, n_states, powers, digits, a, b, keys)


def _as_indices(graph: LandscapeGraph, states) -> np.ndarray:
    if isinstance(states, (int, np.integer)):
        return np.array([int(states)], dtype=np.int64)
    out = []
    for s in states:
        out.append(graph.encode(s) if isinstance(s, SpinConfig) else int(s))
    return np.array(sorted(set(out)), dtype=np.int64)


# ---------------------------------------------------------------------------
# Communication height


@njit(cache=True)
def _minimax_search(indptr, indices, keys, sources, targets_mask, stop_at_target):
    """Best-first expansion with priority = largest key seen on the path."""
    n = keys.shape[0]
    best = np.full(n, np.iinfo(np.int64).max, np.int64)
    # seed the list with a typed element so numba can infer the heap type
    heap = [(keys[sources[0]], sources[0])]
    heap.pop()
    for s in sources:
        if keys[s] < best[s]:
            best[s] = keys[s]
            heapq.heappush(heap, (keys[s], s))
    while len(heap) > 0:
        d, x = heapq.heappop(heap)
        if d > best[x]:
            continue
        if stop_at_target and targets_mask[x]:
            return d, best
        for p in range(indptr[x], indptr[x + 1]):
            y = indices[p]
            nd = d if d > keys[y] else keys[y]
            if nd < best[y]:
                best[y] = nd
                heapq.heappush(heap, (nd, y))
    return np.iinfo(np.int64).max, best


def phi_minimax(graph: LandscapeGraph, A, B) -> int:
    """Communication height key between A and B by best-first minimax search."""
    a_idx, b_idx = _as_indices(graph, A), _as_indices(graph, B)
    mask = np.zeros(graph.n_states, dtype=np.bool_)
    mask[b_idx] = True
    indptr, indices = graph.csr()
    d, _ = _minimax_search(indptr, indices, graph.keys, a_idx, mask, True)
    return int(d)


def phi_to_set(graph: LandscapeGraph, A) -> np.ndarray:
    """Keys of Phi(x, A) for every state x."""
    a_idx = _as_indices(graph, A)
    indptr, indices = graph.csr()
    _, best = _minimax_search(indptr, indices, graph.keys, a_idx,
                              np.zeros(graph.n_states, dtype=np.bool_), False)
    return best


def _components_below(graph: LandscapeGraph, threshold: int, strict: bool = False) -> np.ndarray:
    """Component label of each state in the sub-level graph; -1 above the threshold."""
    keys = graph.keys
    inside = keys < threshold if strict else keys <= threshold
    u, w = graph.edges()
    keep = inside[u] & inside[w]
    n = graph.n_states
    adj = coo_matrix((np.ones(int(keep.sum()), dtype=np.int8), (u[keep], w[keep])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    labels = labels.astype(np.int64)
    labels[~inside] = -1
    return labels


def phi_threshold(graph: LandscapeGraph, A, B) -> int:
    """Communication height key by binary search over thresholds and connectivity."""
    a_idx, b_idx = _as_indices(graph, A), _as_indices(graph, B)
    levels = np.unique(graph.keys)
    lo = int(np.searchsorted(levels, max(graph.keys[a_idx].min(), graph.keys[b_idx].min())))
    hi = levels.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        lab = _components_below(graph, int(levels[mid]))
        la = set(lab[a_idx][lab[a_idx] >= 0].tolist())
        lb = set(lab[b_idx][lab[b_idx] >= 0].tolist())
        if la & lb:
            hi = mid
        else:
            lo = mid + 1
    return int(levels[lo])


def communication_height(graph: LandscapeGraph, A, B, check: bool = True) -> Energy:
    """Phi(A, B), computed by minimax search and, if ``check``, confirmed by thresholds."""
    k1 = phi_minimax(graph, A, B)
    if check:
        k2 = phi_threshold(graph, A, B)
        if k1 != k2:
            raise AssertionError(f"communication height mismatch: {k1} vs {k2}")
    return graph.key_energy(k1)


# ---------------------------------------------------------------------------
# Stability levels


@njit(cache=True)
def _stability_kruskal(order, u, w, weight, keys):
    """For each state, the lowest level at which it connects to a strictly lower state (int64 max: never)."""
    n = keys.shape[0]
    parent = np.arange(n)
    size = np.ones(n, np.int64)
    cmin = keys.copy()
    head = np.arange(n)
    tail = np.arange(n)
    nxt = np.full(n, -1, np.int64)
    phi = np.full(n, np.iinfo(np.int64).max, np.int64)
    for e in order:
        x = u[e]
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        y = w[e]
        while parent[y] != y:
            parent[y] = parent[parent[y]]
            y = parent[y]
        if x == y:
            continue
        lev = weight[e]
        if cmin[x] > cmin[y]:
            z = head[x]
            while z >= 0:
                phi[z] = lev
                z = nxt[z]
            hx, tx = -1, -1
            hy, ty = head[y], tail[y]
        elif cmin[y] > cmin[x]:
            z = head[y]
            while z >= 0:
                phi[z] = lev
                z = nxt[z]
            hy, ty = -1, -1
            hx, tx = head[x], tail[x]
        else:
            hx, tx, hy, ty = head[x], tail[x], head[y], tail[y]
        if hx >= 0 and hy >= 0:
            nxt[tx] = hy
            h, t = hx, ty
        elif hx >= 0:
            h, t = hx, tx
        else:
            h, t = hy, ty
        if size[x] < size[y]:
            x, y = y, x
        parent[y] = x
        size[x] += size[y]
        cmin[x] = min(cmin[x], cmin[y])
        head[x] = h
        tail[x] = t
    return phi


@dataclass(frozen=True)
class StabilityLevels:
    """V (as integer keys; -1 means infinite), stable and metastable sets."""

    v_keys: np.ndarray
    stable: tuple[int, ...]
    metastable: tuple[int, ...]
    max_v_key: int
    h_den: int

    def V(self, index: int) -> Optional[Fraction]:
        k = int(self.v_keys[index])
        return None if k < 0 else Fraction(k, self.h_den)

    def metastable_set_at(self, level_key: int) -> np.ndarray:
        """X_V: states with stability level strictly above V (infinite included)."""
        return np.flatnonzero((self.v_keys < 0) | (self.v_keys > level_key))


def stability_levels(graph: LandscapeGraph) -> StabilityLevels:
    u, w = graph.edges()
    weight = graph.edge_weights()
    order = np.argsort(weight, kind="stable")
    phi = _stability_kruskal(order, u, w, weight, graph.keys)
    v = np.where(phi < INF_KEY, phi - graph.keys, -1)
    stable = np.flatnonzero(graph.keys == graph.keys.min())
    finite = v >= 0
    top = int(v[finite].max()) if finite.any() else -1
    meta = np.flatnonzero(v == top) if top >= 0 else np.array([], dtype=np.int64)
    return StabilityLevels(v, tuple(int(x) for x in stable), tuple(int(x) for x in meta),
                           top, graph.params.h_den)


# ---------------------------------------------------------------------------
# Cycles


@dataclass(frozen=True)
class Cycle:
    states: np.ndarray
    bottom_key: int
    boundary_key: int  # INF_KEY if the cycle is the whole space
    principal_boundary: np.ndarray

    @property
    def trivial(self) -> bool:
        """A singleton whose lowest neighbour is not strictly above it.

        A singleton strict local minimum satisfies the cycle inequality and
        keeps its positive depth; this is the convention under which the
        depth and barrier characterisations of the maximal depth agree.
        """
        return self.states.size == 1 and self.boundary_key <= self.bottom_key

    @property
    def depth_key(self) -> int:
        return 0 if self.trivial else self.boundary_key - self.bottom_key


def _boundary(graph: LandscapeGraph, member: np.ndarray) -> np.ndarray:
    u, w = graph.edges()
    out = np.concatenate([w[member[u] & ~member[w]], u[member[w] & ~member[u]]])
    return np.unique(out)


def _cycle_from_mask(graph: LandscapeGraph, member: np.ndarray) -> Cycle:
    states = np.flatnonzero(member)
    bottom = int(graph.keys[states].min())
    bd = _boundary(graph, member)
    if bd.size == 0:
        return Cycle(states, bottom, INF_KEY, bd)
    if states.size == 1:
        # trivial cycle: its typical exits are the strictly lower neighbours,
        # or the lowest neighbours when none is lower
        lower = bd[graph.keys[bd] < bottom]
        if lower.size:
            return Cycle(states, bottom, int(graph.keys[bd].min()), lower)
    bkey = int(graph.keys[bd].min())
    return Cycle(states, bottom, bkey, bd[graph.keys[bd] == bkey])


def cycle_decomposition(graph: LandscapeGraph, threshold: int) -> list[Cycle]:
    """Cycles formed by the components of {H < threshold} (threshold as a key)."""
    lab = _components_below(graph, threshold, strict=True)
    out = []
    for c in np.unique(lab[lab >= 0]):
        out.append(_cycle_from_mask(graph, lab == c))
    return out


def initial_cycle(graph: LandscapeGraph, sigma: int, A) -> Cycle:
    """{eta : Phi(sigma, eta) < Phi(sigma, A)}, or {sigma} when sigma is in A."""
    a_idx = _as_indices(graph, A)
    if sigma in set(a_idx.tolist()):
        m = np.zeros(graph.n_states, dtype=bool)
        m[sigma] = True
        return _cycle_from_mask(graph, m)
    phi = phi_minimax(graph, sigma, a_idx)
    lab = _components_below(graph, phi, strict=True)
    if lab[sigma] < 0:
        # A is reachable without climbing above H(sigma): the cycle is {sigma}
        m = np.zeros(graph.n_states, dtype=bool)
        m[sigma] = True
        return _cycle_from_mask(graph, m)
    return _cycle_from_mask(graph, lab == lab[sigma])


def _complement(graph: LandscapeGraph, A) -> tuple[np.ndarray, np.ndarray]:
    in_a = np.zeros(graph.n_states, dtype=bool)
    in_a[_as_indices(graph, A)] = True
    if in_a.all():
        raise ValueError("the maximal depth of the whole space is infinite")
    return in_a, np.flatnonzero(~in_a)


def gamma_tilde_by_barriers(graph: LandscapeGraph, A) -> int:
    """max over x in A of Phi(x, X minus A) - H(x), as a key."""
    in_a, rest = _complement(graph, A)
    phi = phi_to_set(graph, rest)
    return int((phi[in_a] - graph.keys[in_a]).max())


def gamma_tilde_by_cycles(graph: LandscapeGraph, A) -> int:
    """max depth over cycles contained in A, scanning every sub-level threshold."""
    in_a, _ = _complement(graph, A)
    best = 0
    u, w = graph.edges()
    keys = graph.keys
    for theta in np.unique(keys)[1:]:
        lab = _components_below(graph, int(theta), strict=True)
        # lowest boundary key of each component: boundary states have key >= theta
        cu, cw = lab[u], lab[w]
        lab_bd = np.concatenate([cu[(cu >= 0) & (cw < 0)], cw[(cw >= 0) & (cu < 0)]])
        key_bd = np.concatenate([keys[w][(cu >= 0) & (cw < 0)], keys[u][(cw >= 0) & (cu < 0)]])
        n_lab = int(lab.max()) + 1
        bmin = np.full(n_lab, INF_KEY, dtype=np.int64)
        np.minimum.at(bmin, lab_bd, key_bd)
        inside = lab >= 0
        cmin = np.full(n_lab, INF_KEY, dtype=np.int64)
        np.minimum.at(cmin, lab[inside], keys[inside])
        leaves = np.zeros(n_lab, dtype=bool)
        leaves[lab[~in_a & inside]] = True
        ok = ~leaves & (bmin < INF_KEY)
        if ok.any():
            best = max(best, int((bmin[ok] - cmin[ok]).max()))
    return best


def gamma_tilde(graph: LandscapeGraph, A) -> Fraction:
    """Maximal depth of the cycles contained in A; both characterisations must agree."""
    k1 = gamma_tilde_by_barriers(graph, A)
    k2 = gamma_tilde_by_cycles(graph, A)
    if k1 != k2:
        raise AssertionError(f"gamma tilde mismatch: {k1} vs {k2}")
    return graph.key_value(k1)


# ---------------------------------------------------------------------------
# Saddles and gates


@dataclass(frozen=True)
class SaddleReport:
    phi_key: int
    saddles: tuple[int, ...]
    essential: tuple[int, ...]
    complete: bool  # False if the path enumeration hit its limit

    @property
    def unessential(self) -> tuple[int, ...]:
        e = set(self.essential)
        return tuple(x for x in self.saddles if x not in e)


def _connects(adj: dict, allowed: set, sources: set, targets: set) -> bool:
    stack = [x for x in sources if x in allowed]
    seen = set(stack)
    while stack:
        x = stack.pop()
        if x in targets:
            return True
        for y in adj[x]:
            if y in allowed and y not in seen:
                seen.add(y)
                stack.append(y)
    return False


def saddles_and_gates(graph: LandscapeGraph, A, B, path_limit: int = 200_000) -> SaddleReport:
    """Minimal saddles between A and B and which of them are essential.

    States strictly below Phi(A, B) are collapsed into wells (components of
    the strict sub-level set).  A saddle is essential when it belongs to an
    inclusion-minimal set of saddles that, together with the wells, joins A
    to B.  Each such set is the saddle set of a simple path in the collapsed
    graph, so simple paths are enumerated and tested for minimality.
    """
    a_idx, b_idx = _as_indices(graph, A), _as_indices(graph, B)
    phi = phi_minimax(graph, a_idx, b_idx)
    lab = _components_below(graph, phi)
    comp = lab[a_idx[0]]
    wells = _components_below(graph, phi, strict=True)
    saddles = np.flatnonzero((graph.keys == phi) & (lab == comp))
    # nodes: ('w', label) for wells and ('s', index) for saddles
    adj: dict = {}
    sad_set = set(saddles.tolist())
    for x in saddles.tolist():
        node = ("s", x)
        adj.setdefault(node, set())
        for y in graph.neighbors(x).tolist():
            if wells[y] >= 0:
                other = ("w", int(wells[y]))
            elif y in sad_set:
                other = ("s", y)
            else:
                continue
            adj[node].add(other)
            adj.setdefault(other, set()).add(node)

    def node_of(x: int):
        return ("w", int(wells[x])) if wells[x] >= 0 else ("s", x)

    src = {node_of(int(x)) for x in a_idx if lab[x] == comp}
    dst = {node_of(int(x)) for x in b_idx if lab[x] == comp}
    for n in src | dst:
        adj.setdefault(n, set())
    well_nodes = {n for n in adj if n[0] == "w"}
    essential: set = set()
    n_paths = 0
    complete = True
    # iterative DFS over simple paths
    for start in src:
        stack = [(start, iter(sorted(adj[start])))]
        on_path = {start}
        while stack:
            node, it = stack[-1]
            if node in dst:
                n_paths += 1
                path_saddles = {n for n in on_path if n[0] == "s"}
                if not path_saddles <= essential:
                    base = well_nodes | path_saddles
                    if all(not _connects(adj, base - {s}, src, dst) for s in path_saddles):
                        essential |= path_saddles
                if n_paths >= path_limit:
                    complete = False
                    break
                stack.pop()
                on_path.discard(node)
                continue
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                on_path.discard(node)
                continue
            if nxt not in on_path:
                on_path.add(nxt)
                stack.append((nxt, iter(sorted(adj[nxt]))))
        if not complete:
            break
    ess = sorted(x for kind, x in essential if kind == "s")
    return SaddleReport(phi, tuple(int(x) for x in saddles), tuple(ess), complete)


def is_gate(graph: LandscapeGraph, A, B, W) -> bool:
    """Whether every path from A to B staying at or below Phi(A, B) meets W."""
    a_idx, b_idx = _as_indices(graph, A), _as_indices(graph, B)
    phi = phi_minimax(graph, a_idx, b_idx)
    inside = graph.keys <= phi
    inside[_as_indices(graph, W)] = False
    u, w = graph.edges()
    keep = inside[u] & inside[w]
    n = graph.n_states
    adj = coo_matrix((np.ones(int(keep.sum()), dtype=np.int8), (u[keep], w[keep])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    la = {int(labels[x]) for x in a_idx if inside[x]}
    lb = {int(labels[x]) for x in b_idx if inside[x]}
    return not (la & lb)


# ---------------------------------------------------------------------------
# Tube of typical trajectories


@dataclass(frozen=True)
class TubeReport:
    states: frozenset
    cycles: tuple[Cycle, ...]
    exits: frozenset  # states of A entered from the tube


def vtj_tube(graph: LandscapeGraph, sigma: int, A) -> TubeReport:
    """Union of the maximal cycles (in the complement of A) on cycle paths that
    leave every cycle through its principal boundary and end in A."""
    a_idx = _as_indices(graph, A)
    in_a = np.zeros(graph.n_states, dtype=bool)
    in_a[a_idx] = True
    if in_a[sigma]:
        return TubeReport(frozenset([int(sigma)]), (), frozenset([int(sigma)]))
    phi = phi_to_set(graph, a_idx)
    label_cache: dict[int, np.ndarray] = {}

    def cycle_id(x: int) -> tuple[int, int]:
        th = int(phi[x])
        if th not in label_cache:
            label_cache[th] = _components_below(graph, th, strict=True)
        lab = label_cache[th][x]
        return (th, int(lab)) if lab >= 0 else (th, -1 - x)

    cycles: dict[tuple[int, int], Cycle] = {}
    succ: dict[tuple[int, int], set] = {}
    exits_of: dict[tuple[int, int], set] = {}
    start = cycle_id(int(sigma))
    todo = [(start, int(sigma))]
    while todo:
        cid, rep = todo.pop()
        if cid in cycles:
            continue
        th, lab = cid
        if lab >= 0:
            member = label_cache[th] == lab
        else:
            member = np.zeros(graph.n_states, dtype=bool)
            member[rep] = True
        cyc = _cycle_from_mask(graph, member)
        cycles[cid] = cyc
        succ[cid] = set()
        exits_of[cid] = set()
        for y in cyc.principal_boundary.tolist():
            if in_a[y]:
                exits_of[cid].add(y)
            else:
                nid = cycle_id(y)
                succ[cid].add(nid)
                todo.append((nid, y))
    # keep cycles from which A is reachable along the recorded jumps
    good = {c for c in cycles if exits_of[c]}
    changed = True
    while changed:
        changed = False
        for c in cycles:
            if c not in good and succ[c] & good:
                good.add(c)
                changed = True
    kept = [cycles[c] for c in cycles if c in good]
    states = frozenset(int(x) for c in kept for x in c.states.tolist())
    exits = frozenset(y for c in good for y in exits_of[c])
    return TubeReport(states, tuple(kept), exits)


# ---------------------------------------------------------------------------
# Spectral gap and mixing time


def _kernel_parts(graph: LandscapeGraph, beta: float):
    """Off-diagonal Metropolis rates p(x, y) = exp(-beta [H(y) - H(x)]+) / (q N) on edges."""
    p = graph.params
    u, w = graph.edges()
    e = (graph.a + graph.b * p.h).astype(float)
    scale = 1.0 / (p.q * p.n_sites)
    p_uw = scale * np.exp(-beta * np.maximum(e[w] - e[u], 0.0))
    p_wu = scale * np.exp(-beta * np.maximum(e[u] - e[w], 0.0))
    return u, w, p_uw, p_wu, e


def gibbs(graph: LandscapeGraph, beta: float) -> np.ndarray:
    e = (graph.a + graph.b * graph.params.h).astype(float)
    x = np.exp(-beta * (e - e.min()))
    return x / x.sum()


def transition_matrix(graph: LandscapeGraph, beta: float) -> np.ndarray:
    """Dense Metropolis kernel (rows sum to one), for small state spaces."""
    if graph.n_states > EIGEN_DENSE_CAP:
        raise ResourceCapError(f"{graph.n_states} states exceeds the dense cap {EIGEN_DENSE_CAP}")
    u, w, p_uw, p_wu, _ = _kernel_parts(graph, beta)
    P = np.zeros((graph.n_states, graph.n_states))
    P[u, w] = p_uw
    P[w, u] = p_wu
    P[np.arange(graph.n_states), np.arange(graph.n_states)] = 1.0 - P.sum(axis=1)
    return P


def spectral_gap(graph: LandscapeGraph, beta: float) -> float:
    """1 - lambda_2 of the Metropolis kernel.

    Computed from the symmetrised generator I - D^1/2 P D^-1/2, whose
    entries are formed directly (no 1 - lambda cancellation).
    """
    if graph.n_states > EIGEN_CAP:
        raise ResourceCapError(f"{graph.n_states} states exceeds the eigen cap {EIGEN_CAP}")
    u, w, p_uw, p_wu, _ = _kernel_parts(graph, beta)
    # sqrt(mu_u / mu_w) p(u, w) = sqrt(p(u, w) p(w, u)) by reversibility
    off = np.sqrt(p_uw * p_wu)
    n = graph.n_states
    diag = np.zeros(n)
    np.add.at(diag, u, p_uw)
    np.add.at(diag, w, p_wu)
    if n <= EIGEN_DENSE_CAP:
        Lm = np.diag(diag)
        Lm[u, w] = -off
        Lm[w, u] = -off
        vals = np.linalg.eigvalsh(Lm)
        return float(vals[1])
    from scipy.sparse import diags
    from scipy.sparse.linalg import LinearOperator, eigsh

    # sqrt(mu) spans the kernel; lift it out of the way and take the lowest eigenvalue
    Lm = (coo_matrix((np.concatenate([-off, -off]), (np.concatenate([u, w]), np.concatenate([w, u]))),
                     shape=(n, n)).tocsr() + diags(diag)).tocsr()
    phi = np.sqrt(gibbs(graph, beta))
    phi /= np.linalg.norm(phi)
    lift = 2.0 * float(diag.max())
    op = LinearOperator((n, n), matvec=lambda x: Lm @ x + lift * phi * (phi @ x), dtype=float)
    vals = eigsh(op, k=1, which="SA", ncv=40, maxiter=200_000, tol=1e-12,
                 return_eigenvectors=False)
    return float(vals[0])


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def mixing_time(graph: LandscapeGraph, beta: float, eps: float = 0.25, t_max: int = 2**62) -> int:
    """Smallest n with max_x TV(P^n(x, .), mu) <= eps (repeated squaring, then bisection)."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    P = transition_matrix(graph, beta)
    mu = gibbs(graph, beta)

    def worst(M: np.ndarray) -> float:
        return 0.5 * float(np.abs(M - mu[None, :]).sum(axis=1).max())

    if worst(np.eye(graph.n_states)) <= eps:
        return 0
    powers = [P]  # powers[k] = P^(2^k)
    while worst(powers[-1]) > eps:
        if 2 ** len(powers) > t_max:
            raise ResourceCapError("mixing time above t_max")
        powers.append(powers[-1] @ powers[-1])
    # P^(2^(k-1)) fails, P^(2^k) succeeds: bisect with binary expansion
    k = len(powers) - 1
    n = 2 ** (k - 1) if k else 0
    M = powers[k - 1] if k else np.eye(graph.n_states)
    for j in range(k - 2, -1, -1):
        cand = M @ powers[j]
        if worst(cand) > eps:
            M = cand
            n += 2**j
    return n + 1 if k else 1


# ---------------------------------------------------------------------------
# Relabelling


def relabel_permutation(graph: LandscapeGraph, perm: dict[int, int]) -> np.ndarray:
    """Index map x -> x' for a permutation of spin labels (spin 1 must stay fixed)."""
    if perm.get(1, 1) != 1:
        raise ValueError("the field singles out spin 1; it cannot be relabelled")
    q = graph.params.q
    table = np.arange(q, dtype=np.int64)
    for s, t in perm.items():
        table[s - 1] = t - 1
    new_digits = table[graph.digits.astype(np.int64)]
    return (new_digits * graph.powers).sum(axis=1)


# ---------------------------------------------------------------------------
# Report


def oracle_report(graph: LandscapeGraph, beta: Optional[float] = None) -> dict:
    """Phi table between homogeneous states, stable and metastable sets, V histogram."""
    p = graph.params
    homog = {s: graph.uniform(s) for s in range(1, p.q + 1)}
    phi_table = {}
    for r in homog:
        for s in homog:
            if r < s:
                k = phi_minimax(graph, homog[r], homog[s])
                phi_table[f"{r}-{s}"] = str(graph.key_value(k))
    sl = stability_levels(graph)
    finite = sl.v_keys[sl.v_keys >= 0]
    levels, counts = np.unique(finite, return_counts=True)
    report = {
        "q": p.q, "K": p.K, "L": p.L, "h": p.h,
        "n_states": graph.n_states,
        "energies": {str(s): str(p.exact(graph.energy(i))) for s, i in homog.items()},
        "phi": phi_table,
        "stable": [graph.decode(i).spins.tolist() for i in sl.stable],
        "metastable": [graph.decode(i).spins.tolist() for i in sl.metastable],
        "metastable_V": str(graph.key_value(sl.max_v_key)) if sl.max_v_key >= 0 else None,
        "V_histogram": {str(graph.key_value(int(k))): int(c) for k, c in zip(levels, counts)},
    }
    if beta is not None:
        report["beta"] = beta
        report["spectral_gap"] = spectral_gap(graph, beta)
        if graph.n_states <= EIGEN_DENSE_CAP:
            report["mixing_time"] = mixing_time(graph, beta)
    return report
