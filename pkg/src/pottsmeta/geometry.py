"""Geometric observables: disagreeing edges, bridges, tiles, clusters and shape classes."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .lattice import Energy, ModelParams, SpinConfig, energy_delta, neighbor_table
from . import shapes as sh


# ---------------------------------------------------------------------------
# Edges and bridges


@dataclass(frozen=True)
class EdgeStats:
    d_h: int
    d_v: int
    per_row: tuple[int, ...]
    per_col: tuple[int, ...]

    @property
    def total(self) -> int:
        return self.d_h + self.d_v


def edge_stats(config: SpinConfig) -> EdgeStats:
    """Disagreeing horizontal edges per row and vertical edges per column."""
    g = config.grid()
    horiz = g != np.roll(g, -1, axis=1)
    vert = g != np.roll(g, -1, axis=0)
    per_row = tuple(int(x) for x in horiz.sum(axis=1))
    per_col = tuple(int(x) for x in vert.sum(axis=0))
    return EdgeStats(sum(per_row), sum(per_col), per_row, per_col)


@dataclass(frozen=True)
class SpinBridges:
    rows: tuple[int, ...]
    cols: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.rows) + len(self.cols)

    @property
    def has_cross(self) -> bool:
        return bool(self.rows) and bool(self.cols)


@dataclass(frozen=True)
class BridgeStats:
    by_spin: dict[int, SpinBridges]

    def B(self, s: int) -> int:
        b = self.by_spin.get(s)
        return b.count if b else 0

    def has_cross(self, s: int) -> bool:
        b = self.by_spin.get(s)
        return bool(b and b.has_cross)


def bridge_stats(config: SpinConfig) -> BridgeStats:
    """Monochromatic rows (horizontal bridges) and columns (vertical bridges) per spin."""
    g = config.grid()
    found: dict[int, tuple[list, list]] = {}
    for i, row in enumerate(g):
        if (row == row[0]).all():
            found.setdefault(int(row[0]), ([], []))[0].append(i)
    for j, col in enumerate(g.T):
        if (col == col[0]).all():
            found.setdefault(int(col[0]), ([], []))[1].append(j)
    return BridgeStats({s: SpinBridges(tuple(r), tuple(c)) for s, (r, c) in found.items()})


# ---------------------------------------------------------------------------
# Tiles

# (kind, count of the centre spin, arrangement, others) -> figure label.
# 'corner' and 'straight' describe where the two equal neighbours sit.


@dataclass(frozen=True)
class TileClass:
    vertex: int
    center: int
    neighbors: tuple[int, int, int, int]
    stable: bool
    min_delta: Energy
    figure_case: Optional[str]
    min_q: Optional[int]


def _tile_case(center: int, nb: tuple[int, ...]) -> tuple[Optional[str], Optional[int]]:
    """Label of a stable tile and the smallest q in which that tile exists."""
    same = [k for k, x in enumerate(nb) if x == center]
    others = [x for x in nb if x != center]
    n = len(same)
    # up/down = 0/2, right/left = 1/3; opposite positions differ by 2
    straight = n == 2 and (same[1] - same[0]) == 2
    if center != 1:
        if n == 4:
            return "a", 2
        if n == 3:
            return ("d", 2) if others[0] == 1 else ("c", 3)
        if n == 2:
            x, y = others
            arr = 0 if not straight else 1
            if x == y:
                if x == 1:
                    return "hi"[arr], 2
                return "fg"[arr], 3
            if 1 in (x, y):
                return "no"[arr], 3
            return "lm"[arr], 4
        if n == 1 and len(set(others)) == 3:
            return ("s", 4) if 1 in others else ("r", 5)
        return None, None
    if n == 4:
        return "b", 2
    if n == 3:
        return "e", 2
    if n == 2 and others[0] != others[1]:
        return "pq"[int(straight)], 3
    return None, None


def tile_stable_rule(center: int, nb) -> bool:
    """Closed-form stability: a spin s != 1 needs n_s >= n_t for all t; spin 1 needs n_1 > n_t."""
    counts: dict[int, int] = {}
    for x in nb:
        counts[int(x)] = counts.get(int(x), 0) + 1
    own = counts.pop(center, 0)
    best = max(counts.values(), default=0)
    return own > best if center == 1 else own >= best


def classify_tile(config: SpinConfig, v: int, params: ModelParams) -> TileClass:
    nb = tuple(int(x) for x in config.spins[neighbor_table(config.K, config.L)[v]])
    center = config[v]
    deltas = [energy_delta(config, v, s, params) for s in range(1, params.q + 1) if s != center]
    low = min(deltas, key=params.exact)
    stable = params.exact(low) >= 0
    case, min_q = _tile_case(center, nb) if stable else (None, None)
    return TileClass(v, center, nb, stable, low, case, min_q)


# ---------------------------------------------------------------------------
# Clusters


@dataclass(frozen=True)
class Cluster:
    spin: int
    sites: frozenset[int]
    area: int
    perimeter: int
    top: int
    left: int
    height: int
    width: int
    wraps_vertically: bool
    wraps_horizontally: bool

    @property
    def strip_like(self) -> bool:
        return self.wraps_vertically or self.wraps_horizontally


def _cyclic_extent(occupied: np.ndarray) -> tuple[int, int]:
    """Smallest cyclic interval (start, length) covering the occupied indices."""
    n = occupied.size
    if occupied.all():
        return 0, n
    # the complement of the longest empty cyclic gap
    best_len, best_end = -1, 0
    run = 0
    for k in range(2 * n):
        if not occupied[k % n]:
            run += 1
            if run > best_len:
                best_len, best_end = run, k
        else:
            run = 0
    best_len = min(best_len, n)
    start = (best_end + 1) % n
    return start, n - best_len


def clusters(config: SpinConfig, s: int) -> list[Cluster]:
    """4-connected components of spin ``s`` on the torus."""
    K, L = config.K, config.L
    nbr = neighbor_table(K, L)
    spins = config.spins
    seen = np.zeros(K * L, dtype=bool)
    out: list[Cluster] = []
    for v0 in np.flatnonzero(spins == s):
        if seen[v0]:
            continue
        comp = []
        queue = deque([int(v0)])
        seen[v0] = True
        while queue:
            v = queue.popleft()
            comp.append(v)
            for w in nbr[v]:
                if spins[w] == s and not seen[w]:
                    seen[w] = True
                    queue.append(int(w))
        members = np.zeros(K * L, dtype=bool)
        members[comp] = True
        perimeter = int(np.count_nonzero(~members[nbr[comp]]))
        rows_occ = members.reshape(K, L).any(axis=1)
        cols_occ = members.reshape(K, L).any(axis=0)
        top, height = _cyclic_extent(rows_occ)
        left, width = _cyclic_extent(cols_occ)
        out.append(
            Cluster(s, frozenset(comp), len(comp), perimeter, top, left, height, width,
                    height == K, width == L)
        )
    return out


# ---------------------------------------------------------------------------
# Shapes


@dataclass(frozen=True)
class Homogeneous:
    s: int


@dataclass(frozen=True)
class QuasiRect:
    """Member of R-bar_{a,b}(r, s): an a x b rectangle of s (a <= b) in an r sea."""

    r: int
    s: int
    a: int
    b: int
    rows: int = field(compare=False, default=0)
    cols: int = field(compare=False, default=0)


@dataclass(frozen=True)
class RectWithBar:
    """Member of B-bar^l_{a,b}(r, s): rectangle with a 1 x l bar on a side of length b."""

    r: int
    s: int
    a: int
    b: int
    l: int
    side: str
    offset: int = field(compare=False, default=0)


@dataclass(frozen=True)
class VStrip:
    r: int
    s: int
    thickness: int
    bar: int


@dataclass(frozen=True)
class HStrip:
    r: int
    s: int
    thickness: int
    bar: int


@dataclass(frozen=True)
class Other:
    pass


ShapeClass = Union[Homogeneous, QuasiRect, RectWithBar, VStrip, HStrip, Other]


def _decode(code: np.ndarray, r: int, s: int) -> ShapeClass:
    kind = int(code[0])
    if kind == sh.HOMOG_BG:
        return Homogeneous(r)
    if kind == sh.HOMOG_FG:
        return Homogeneous(s)
    if kind == sh.RECT:
        rows, cols = int(code[1]), int(code[2])
        return QuasiRect(r, s, min(rows, cols), max(rows, cols), rows, cols)
    if kind == sh.RECT_BAR:
        return RectWithBar(r, s, int(code[1]), int(code[2]), int(code[3]),
                           sh.SIDES[int(code[4])], int(code[5]))
    if kind == sh.VSTRIP:
        return VStrip(r, s, int(code[1]), int(code[2]))
    if kind == sh.HSTRIP:
        return HStrip(r, s, int(code[1]), int(code[2]))
    return Other()


def _background_order(values: list[int], counts: list[int]) -> list[tuple[int, int]]:
    x, y = values
    if 1 in values:
        other = y if x == 1 else x
        return [(1, other), (other, 1)]
    big, small = (x, y) if counts[0] >= counts[1] else (y, x)
    return [(big, small), (small, big)]


def classify_shape(config: SpinConfig) -> ShapeClass:
    """Recognise homogeneous states, rectangles, rectangles with a bar and strips."""
    values, counts = np.unique(config.spins, return_counts=True)
    if values.size == 1:
        return Homogeneous(int(values[0]))
    if values.size > 2:
        return Other()
    g = config.grid()
    for bg, fg in _background_order([int(v) for v in values], [int(c) for c in counts]):
        shape = _decode(sh.shape_of(g, bg, fg), bg, fg)
        if not isinstance(shape, Other):
            return shape
    return Other()


def _single_foreground(config: SpinConfig) -> Optional[int]:
    """The unique non-1 spin if the configuration only uses {1, s}; 0 for all-1; None otherwise."""
    others = np.unique(config.spins[config.spins != 1])
    if others.size == 0:
        return 0
    if others.size == 1:
        return int(others[0])
    return None


def gate_class(config: SpinConfig, params: ModelParams) -> Optional[str]:
    """'G1', 'G2', 'Wprime' or None for the critical droplets of the 1 -> stable transition."""
    fg = _single_foreground(config)
    if not fg:
        return None
    code = sh.shape_of(config.grid(), 1, fg)
    return {sh.GATE_G1: "G1", sh.GATE_G2: "G2", sh.GATE_WPRIME: "Wprime"}.get(
        int(sh.gate_code(code, params.ell_star))
    )


def in_tube(config: SpinConfig, params: ModelParams) -> bool:
    """Membership in the union of shape families making up the tube from all-1."""
    fg = _single_foreground(config)
    if fg is None:
        return False
    if fg == 0:
        return True
    code = sh.shape_of(config.grid(), 1, fg)
    return bool(sh.tube_code_ok(code, params.ell_star, params.K, params.L))


# ---------------------------------------------------------------------------
# Local minima and stable plateaux

LOCAL_MIN_CLASSES = ("M1", "M2", "M3", "M4", "M1bar", "NotMinimum")
PLATEAU_CAP = 50_000


def move_keys(spins: np.ndarray, K: int, L: int, q: int, params: ModelParams) -> np.ndarray:
    """(N, q) integer keys of every single-flip energy change; void moves get a huge key."""
    nb = spins[neighbor_table(K, L)]
    n_old = (nb == spins[:, None]).sum(axis=1)
    keys = np.empty((spins.size, q), dtype=np.int64)
    old_one = (spins == 1).astype(np.int64)
    for s in range(1, q + 1):
        da = n_old - (nb == s).sum(axis=1)
        db = int(s == 1) - old_one
        keys[:, s - 1] = da * params.h_den + db * params.h_num
    keys[np.arange(spins.size), spins.astype(np.int64) - 1] = np.iinfo(np.int64).max
    return keys


def _adjacent_clusters(config: SpinConfig, comps: list[Cluster]) -> set[tuple[int, int]]:
    owner = np.empty(config.K * config.L, dtype=np.int64)
    for idx, c in enumerate(comps):
        owner[list(c.sites)] = idx
    nbr = neighbor_table(config.K, config.L)
    pairs = set()
    for k in (1, 2):
        a, b = owner, owner[nbr[:, k]]
        diff = a != b
        for x, y in zip(a[diff], b[diff]):
            pairs.add((int(min(x, y)), int(max(x, y))))
    return pairs


def _geometric_label(config: SpinConfig) -> str:
    values = np.unique(config.spins)
    if values.size == 1:
        return "M1"
    comps = [c for s in values for c in clusters(config, int(s))]
    strips = [c for c in comps if c.strip_like]
    rects = {i for i, c in enumerate(comps) if not c.strip_like and c.area == c.height * c.width}
    thin = any(
        (c.width if c.wraps_vertically else c.height) == 1
        for c in strips
        if not (c.wraps_vertically and c.wraps_horizontally)
    )
    if thin:
        return "M4"
    for i, j in _adjacent_clusters(config, comps):
        if i in rects and j in rects and comps[i].spin != comps[j].spin:
            return "M4"
    if any(comps[i].spin != 1 for i in rects):
        return "M3"
    return "M2"


def classify_local_minimum(config: SpinConfig, params: ModelParams) -> str:
    """Local-minimum class by exact energy tests plus a geometric label.

    Returns 'NotMinimum' if a strictly downhill flip exists.  If the lowest
    flip is level, the plateau of equal-energy states is explored; it is
    'M1bar' when no plateau member has a downhill flip.  Strict minima are
    labelled 'M1' (homogeneous), 'M2' (strips of thickness at least two),
    'M3' (isolated non-1 rectangles) or 'M4' (adjacent rectangles of
    different spins, or a strip of thickness one).
    """
    K, L, q = config.K, config.L, params.q
    keys = move_keys(config.spins, K, L, q, params)
    low = int(keys.min())
    if low < 0:
        return "NotMinimum"
    if low > 0:
        return _geometric_label(config)
    seen = {config.spins.tobytes()}
    queue = deque([config.spins])
    while queue:
        spins = queue.popleft()
        keys = move_keys(spins, K, L, q, params)
        if (keys < 0).any():
            return "NotMinimum"
        for v, s0 in zip(*np.nonzero(keys == 0)):
            nxt = spins.copy()
            nxt[v] = s0 + 1
            tag = nxt.tobytes()
            if tag not in seen:
                if len(seen) >= PLATEAU_CAP:
                    raise RuntimeError(f"plateau larger than {PLATEAU_CAP} states")
                seen.add(tag)
                queue.append(nxt)
    return "M1bar"
