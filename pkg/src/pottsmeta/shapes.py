"""Recognition and generation of the droplet shapes used by the gate and tube results.

The recogniser works on a grid holding two spin values, a background ``bg``
and a foreground ``fg``, and returns a small integer code so it can be called
from the compiled Monte Carlo kernel as well as from Python.

Code layout (int64 array of length 7)::

    [kind, p1, p2, p3, p4, p5, p6]

    HOMOG_BG / HOMOG_FG   no parameters
    RECT                  p1 = rows, p2 = cols, p3 = top row, p4 = left col
    RECT_BAR              p1 = a (rectangle side not carrying the bar),
                          p2 = b (side carrying the bar), p3 = bar length l,
                          p4 = side (0 top, 1 bottom, 2 left, 3 right),
                          p5 = offset of the bar along the side
    VSTRIP / HSTRIP       p1 = thickness, p2 = bar length (0 if none),
                          p3 = bar side (0 before the strip, 1 after)
    OTHER                 no parameters
"""

from __future__ import annotations

import numpy as np
from numba import njit

OTHER, HOMOG_BG, HOMOG_FG, RECT, RECT_BAR, VSTRIP, HSTRIP = range(7)
SIDES = ("top", "bottom", "left", "right")


@njit(cache=True)
def _cyclic_run(occ):
    """Start and length of the single cyclic run of True in ``occ``; (-1, 0) if not one run."""
    n = occ.shape[0]
    total = 0
    for i in range(n):
        if occ[i]:
            total += 1
    if total == 0:
        return -1, 0
    if total == n:
        return 0, n
    start = -1
    for i in range(n):
        if occ[i] and not occ[(i - 1) % n]:
            if start >= 0:
                return -1, 0
            start = i
    return start, total


@njit(cache=True)
def _strip_code(g, bg, fg, out, vertical):
    # A vertical strip in g is a horizontal strip in the transpose; index
    # through (r, c) -> g[r, c] or g[c, r] to avoid copying.
    if vertical:
        K, L = g.shape[0], g.shape[1]
    else:
        K, L = g.shape[1], g.shape[0]
    colc = np.zeros(L, np.int64)
    n = 0
    for i in range(K):
        for j in range(L):
            x = g[i, j] if vertical else g[j, i]
            if x == fg:
                colc[j] += 1
                n += 1
    full = colc == K
    c0, w = _cyclic_run(full)
    if c0 < 0 or w == L:
        return False
    rem = n - w * K
    kind = VSTRIP if vertical else HSTRIP
    if rem == 0:
        out[0] = kind
        out[1] = w
        out[2] = 0
        out[3] = 0
        return True
    before = (c0 - 1) % L
    after = (c0 + w) % L
    col = -1
    side = 0
    if colc[after] == rem:
        col = after
        side = 1
    elif colc[before] == rem:
        col = before
        side = 0
    else:
        return False
    occ = np.zeros(K, np.bool_)
    for i in range(K):
        x = g[i, col] if vertical else g[col, i]
        occ[i] = x == fg
    r0, l = _cyclic_run(occ)
    if r0 < 0:
        return False
    out[0] = kind
    out[1] = w
    out[2] = l
    out[3] = side
    return True


@njit(cache=True)
def _row_run(box, i, W):
    """(start, length) of fg cells in box row i if they form one run, else (-1, 0)."""
    start = -1
    cnt = 0
    for j in range(W):
        if box[i, j]:
            if start < 0:
                start = j
            elif not box[i, j - 1]:
                return -1, 0
            cnt += 1
    return start, cnt


@njit(cache=True)
def _col_run(box, j, H):
    start = -1
    cnt = 0
    for i in range(H):
        if box[i, j]:
            if start < 0:
                start = i
            elif not box[i - 1, j]:
                return -1, 0
            cnt += 1
    return start, cnt


@njit(cache=True)
def shape_code(g, bg, fg):
    """Classify a two-valued grid; see the module docstring for the code layout."""
    K, L = g.shape[0], g.shape[1]
    out = np.zeros(7, np.int64)
    rowc = np.zeros(K, np.int64)
    colc = np.zeros(L, np.int64)
    n = 0
    for i in range(K):
        for j in range(L):
            x = g[i, j]
            if x == fg:
                rowc[i] += 1
                colc[j] += 1
                n += 1
            elif x != bg:
                return out
    if n == 0:
        out[0] = HOMOG_BG
        return out
    if n == K * L:
        out[0] = HOMOG_FG
        return out
    if _strip_code(g, bg, fg, out, True):
        return out
    if _strip_code(g, bg, fg, out, False):
        return out
    i0, H = _cyclic_run(rowc > 0)
    j0, W = _cyclic_run(colc > 0)
    if i0 < 0 or j0 < 0 or H == K or W == L:
        return out
    box = np.zeros((H, W), np.bool_)
    for a in range(H):
        for b in range(W):
            box[a, b] = g[(i0 + a) % K, (j0 + b) % L] == fg
    if n == H * W:
        out[0] = RECT
        out[1] = H
        out[2] = W
        out[3] = i0
        out[4] = j0
        return out
    # a shape can read both ways (bar on a row or on a column of the box);
    # the canonical reading keeps the larger rectangle, i.e. the shorter bar
    best_area = -1
    if H >= 2:
        # bar along the top or bottom row of the box
        for side in range(2):
            bar_row = 0 if side == 0 else H - 1
            ok = True
            for a in range(H):
                if a != bar_row and rowc[(i0 + a) % K] != W:
                    ok = False
                    break
            if ok:
                st, l = _row_run(box, bar_row, W)
                if st >= 0 and 1 <= l <= W - 1 and (H - 1) * W > best_area:
                    best_area = (H - 1) * W
                    out[0] = RECT_BAR
                    out[1] = H - 1
                    out[2] = W
                    out[3] = l
                    out[4] = side
                    out[5] = st
                    break
    if W >= 2:
        for side in range(2):
            bar_col = 0 if side == 0 else W - 1
            ok = True
            for b in range(W):
                if b != bar_col and colc[(j0 + b) % L] != H:
                    ok = False
                    break
            if ok:
                st, l = _col_run(box, bar_col, H)
                if st >= 0 and 1 <= l <= H - 1 and (W - 1) * H > best_area:
                    best_area = (W - 1) * H
                    out[0] = RECT_BAR
                    out[1] = W - 1
                    out[2] = H
                    out[3] = l
                    out[4] = 2 + side
                    out[5] = st
                    break
    return out


# Gate codes
GATE_NONE, GATE_G1, GATE_G2, GATE_WPRIME = 0, 1, 2, 3


@njit(cache=True)
def gate_code(code, ell):
    """Gate membership of a shape code whose background is spin 1."""
    if code[0] != RECT_BAR or code[3] != 1:
        return GATE_NONE
    a, b = code[1], code[2]
    if a == ell - 1 and b == ell:
        if code[5] == 0 or code[5] == b - 1:
            return GATE_G1
        return GATE_G2
    if a == ell and b == ell - 1:
        return GATE_WPRIME
    return GATE_NONE


@njit(cache=True)
def tube_code_ok(code, ell, K, L):
    """Whether a shape code (background 1) is one of the tube's shape families."""
    kind = code[0]
    big = max(K, L) - 1
    if kind == HOMOG_BG or kind == HOMOG_FG:
        return True
    if kind == RECT:
        a = min(code[1], code[2])
        b = max(code[1], code[2])
        if b == a + 1 and b <= ell:
            return True
        if a == b and a <= ell - 1:
            return True
        return ell <= a and b <= big
    if kind == RECT_BAR:
        a, b, l = code[1], code[2], code[3]
        if b == a + 1 and b <= ell and 1 <= l <= b - 1:
            return True
        if a == b and a + 1 <= ell and 1 <= l <= a - 1:
            return True
        return ell <= a <= big and ell <= b <= big and 1 <= l <= b - 1
    if kind == VSTRIP or kind == HSTRIP:
        return code[1] >= ell
    return False


def shape_of(config_grid: np.ndarray, bg: int, fg: int) -> np.ndarray:
    return shape_code(np.ascontiguousarray(config_grid, dtype=np.int8), np.int8(bg), np.int8(fg))


# ---------------------------------------------------------------------------
# Generators (used for enumeration of gates and in tests)


def rect_grid(K: int, L: int, r: int, s: int, top: int, left: int, rows: int, cols: int) -> np.ndarray:
    g = np.full((K, L), r, dtype=np.int8)
    ii = (top + np.arange(rows)) % K
    jj = (left + np.arange(cols)) % L
    g[np.ix_(ii, jj)] = s
    return g


def rect_bar_grid(
    K: int, L: int, r: int, s: int, top: int, left: int,
    a: int, b: int, l: int, side: str, offset: int,
) -> np.ndarray:
    """Rectangle a x b (b is the side carrying the bar) with a 1 x l bar.

    The rectangle occupies the bounding box corner (top, left) of the
    union; ``side`` says where the bar sits and ``offset`` its position
    along that side.
    """
    if not 1 <= l <= b - 1 or not 0 <= offset <= b - l:
        raise ValueError("bar must satisfy 1 <= l <= b-1 and fit on the side")
    g = np.full((K, L), r, dtype=np.int8)
    if side in ("top", "bottom"):
        rows, cols = a, b
        r0 = top + 1 if side == "top" else top
        bar_row = top if side == "top" else top + a
        g[np.ix_((r0 + np.arange(rows)) % K, (left + np.arange(cols)) % L)] = s
        g[bar_row % K, (left + offset + np.arange(l)) % L] = s
    elif side in ("left", "right"):
        rows, cols = b, a
        c0 = left + 1 if side == "left" else left
        bar_col = left if side == "left" else left + a
        g[np.ix_((top + np.arange(rows)) % K, (c0 + np.arange(cols)) % L)] = s
        g[(top + offset + np.arange(l)) % K, bar_col % L] = s
    else:
        raise ValueError(f"unknown side {side!r}")
    return g


def strip_grid(
    K: int, L: int, r: int, s: int, start: int, thickness: int,
    vertical: bool = True, bar: int = 0, bar_after: bool = True, bar_offset: int = 0,
) -> np.ndarray:
    g = np.full((K, L), r, dtype=np.int8)
    if vertical:
        g[:, (start + np.arange(thickness)) % L] = s
        if bar:
            col = (start + thickness) % L if bar_after else (start - 1) % L
            g[(bar_offset + np.arange(bar)) % K, col] = s
    else:
        g[(start + np.arange(thickness)) % K, :] = s
        if bar:
            row = (start + thickness) % K if bar_after else (start - 1) % K
            g[row, (bar_offset + np.arange(bar)) % L] = s
    return g
