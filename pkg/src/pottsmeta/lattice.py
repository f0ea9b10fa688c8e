"""Potts configurations on a K x L torus with a negative field on spin 1.

Energies are kept as integer pairs ``(a, b)`` meaning ``a + b*h``: ``a`` is
minus the number of agreeing edges and ``b`` the number of sites with spin 1.
Floats are only derived when an exponential is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
import math

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid parameters, shapes or spin values."""


@dataclass(frozen=True)
class Energy:
    """Exact energy ``a + b*h`` (or a difference of two such energies)."""

    a: int
    b: int

    def __add__(self, other: "Energy") -> "Energy":
        return Energy(self.a + other.a, self.b + other.b)

    def __sub__(self, other: "Energy") -> "Energy":
        return Energy(self.a - other.a, self.b - other.b)

    def __neg__(self) -> "Energy":
        return Energy(-self.a, -self.b)

    def exact(self, h: Fraction) -> Fraction:
        return self.a + self.b * h

    def value(self, h: float | Fraction) -> float:
        return self.a + self.b * float(h)

    def key(self, params: "ModelParams") -> int:
        """Integer proportional to the energy; orders energies exactly."""
        return self.a * params.h_den + self.b * params.h_num


ZERO = Energy(0, 0)


def exact_h(h: float) -> Fraction:
    """Rational value of ``h`` as written in decimal (0.9 -> 9/10)."""
    return Fraction(repr(float(h)))


def critical_length(h: float) -> int:
    """Side of the critical droplet, ceil(2/h); requires 0<h<1 and 2/h non-integer."""
    hx = exact_h(h)
    if not 0 < hx < 1:
        raise ConfigurationError(f"field h={h} must satisfy 0 < h < 1")
    ratio = 2 / hx
    if ratio.denominator == 1:
        raise ConfigurationError(f"2/h = {ratio} is an integer; the field is degenerate")
    return math.ceil(ratio)


@dataclass(frozen=True)
class ModelParams:
    """Model parameters.

    ``relaxed=True`` admits micro instances with K < 3*ell_star; use
    :attr:`in_regime` before asserting large-lattice statements.
    """

    q: int
    K: int
    L: int
    h: float
    beta: float = 1.0
    relaxed: bool = False

    def __post_init__(self) -> None:
        if self.q < 2:
            raise ConfigurationError("q must be at least 2")
        if self.K < 3 or self.L < 3:
            raise ConfigurationError("K and L must be at least 3")
        if self.L < self.K:
            raise ConfigurationError("convention L >= K; transpose the lattice")
        if self.beta < 0:
            raise ConfigurationError("beta must be non-negative")
        ell = critical_length(self.h)
        if not self.relaxed and self.K < 3 * ell:
            raise ConfigurationError(
                f"K={self.K} < 3*ell_star={3 * ell}; pass relaxed=True for micro instances"
            )

    @property
    def h_exact(self) -> Fraction:
        return exact_h(self.h)

    @property
    def h_num(self) -> int:
        return self.h_exact.numerator

    @property
    def h_den(self) -> int:
        return self.h_exact.denominator

    @property
    def ell_star(self) -> int:
        return critical_length(self.h)

    @property
    def k_star(self) -> int:
        ell = self.ell_star
        return ell * (ell - 1) + 1

    @property
    def n_sites(self) -> int:
        return self.K * self.L

    @property
    def n_edges(self) -> int:
        return 2 * self.K * self.L

    @property
    def in_regime(self) -> bool:
        """True when K >= 3*ell_star, the regime of the asymptotic theorems."""
        return self.K >= 3 * self.ell_star

    def with_beta(self, beta: float) -> "ModelParams":
        return ModelParams(self.q, self.K, self.L, self.h, beta, self.relaxed)

    def exact(self, e: Energy) -> Fraction:
        return e.exact(self.h_exact)

    def value(self, e: Energy) -> float:
        return e.a + e.b * self.h


@lru_cache(maxsize=None)
def neighbor_table(K: int, L: int) -> np.ndarray:
    """(K*L, 4) table of torus neighbours in the order up, right, down, left."""
    idx = np.arange(K * L).reshape(K, L)
    table = np.stack(
        [
            np.roll(idx, 1, axis=0).ravel(),
            np.roll(idx, -1, axis=1).ravel(),
            np.roll(idx, -1, axis=0).ravel(),
            np.roll(idx, 1, axis=1).ravel(),
        ],
        axis=1,
    ).astype(np.int64)
    table.setflags(write=False)
    return table


class SpinConfig:
    """Immutable configuration; ``spins[i*L + j]`` is the spin at row i, column j."""

    __slots__ = ("K", "L", "spins", "_hash")

    def __init__(self, spins, K: int, L: int, q: int | None = None):
        arr = np.array(spins, dtype=np.int8).ravel()
        if arr.size != K * L:
            raise ConfigurationError(f"expected {K * L} spins, got {arr.size}")
        if arr.size and arr.min() < 1:
            raise ConfigurationError("spins must be in 1..q")
        if q is not None and arr.size and arr.max() > q:
            raise ConfigurationError(f"spin value above q={q}")
        arr.setflags(write=False)
        self.K, self.L, self.spins = K, L, arr
        self._hash = None

    @classmethod
    def uniform(cls, K: int, L: int, s: int) -> "SpinConfig":
        return cls(np.full(K * L, s, dtype=np.int8), K, L)

    @classmethod
    def from_grid(cls, grid) -> "SpinConfig":
        g = np.asarray(grid)
        return cls(g, g.shape[0], g.shape[1])

    def grid(self) -> np.ndarray:
        return self.spins.reshape(self.K, self.L)

    def __getitem__(self, v: int) -> int:
        return int(self.spins[v])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpinConfig)
            and self.K == other.K
            and self.L == other.L
            and np.array_equal(self.spins, other.spins)
        )

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.K, self.L, self.spins.tobytes()))
        return self._hash

    def __repr__(self) -> str:
        rows = "/".join("".join(str(x) for x in row) for row in self.grid())
        return f"SpinConfig({self.K}x{self.L}: {rows})"

    def count(self, s: int) -> int:
        return int(np.count_nonzero(self.spins == s))

    def transpose(self) -> "SpinConfig":
        return SpinConfig(self.grid().T.copy(), self.L, self.K)


def _check_dims(config: SpinConfig, params: ModelParams) -> None:
    if config.K != params.K or config.L != params.L:
        raise ConfigurationError(
            f"configuration is {config.K}x{config.L}, parameters say {params.K}x{params.L}"
        )


def energy(config: SpinConfig, params: ModelParams) -> Energy:
    _check_dims(config, params)
    return energy_of_grid(config.grid())


def energy_of_grid(g: np.ndarray) -> Energy:
    agree = int(np.count_nonzero(g == np.roll(g, 1, axis=0)))
    agree += int(np.count_nonzero(g == np.roll(g, 1, axis=1)))
    return Energy(-agree, int(np.count_nonzero(g == 1)))


def neighbor_counts(config: SpinConfig, v: int) -> np.ndarray:
    """n_s(v) for s = 0..max spin (index 0 unused)."""
    nb = config.spins[neighbor_table(config.K, config.L)[v]]
    return np.bincount(nb, minlength=int(config.spins.max()) + 1)


def energy_delta(config: SpinConfig, v: int, s: int, params: ModelParams) -> Energy:
    """H(flip(config, v, s)) - H(config) from the four neighbours of v."""
    _check_dims(config, params)
    _check_move(config, v, s, params.q)
    old = int(config.spins[v])
    if old == s:
        return ZERO
    nb = config.spins[neighbor_table(config.K, config.L)[v]]
    n_old = int(np.count_nonzero(nb == old))
    n_new = int(np.count_nonzero(nb == s))
    return Energy(n_old - n_new, int(s == 1) - int(old == 1))


def _check_move(config: SpinConfig, v: int, s: int, q: int | None) -> None:
    if not 0 <= v < config.K * config.L:
        raise ConfigurationError(f"vertex {v} out of range")
    if s < 1 or (q is not None and s > q):
        raise ConfigurationError(f"spin {s} out of range")


def flip(config: SpinConfig, v: int, s: int, q: int | None = None) -> SpinConfig:
    """Copy of ``config`` with site v set to s."""
    _check_move(config, v, s, q)
    if config.spins[v] == s:
        return config
    arr = config.spins.copy()
    arr[v] = s
    return SpinConfig(arr, config.K, config.L)


def site(i: int, j: int, L: int) -> int:
    return i * L + j


def dumps(config: SpinConfig, params: ModelParams) -> str:
    """Text form: header ``q K L h`` then one line of spins per row."""
    _check_dims(config, params)
    lines = [f"{params.q} {params.K} {params.L} {params.h!r}"]
    lines += [" ".join(str(int(x)) for x in row) for row in config.grid()]
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[SpinConfig, int, float]:
    """Inverse of :func:`dumps`; returns (config, q, h)."""
    rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 4:
        raise ConfigurationError("missing header line 'q K L h'")
    try:
        q, K, L = (int(x) for x in rows[0][:3])
        h = float(rows[0][3])
        body = [[int(x) for x in r] for r in rows[1:]]
    except ValueError as exc:
        raise ConfigurationError(f"malformed configuration text: {exc}") from None
    if len(body) != K or any(len(r) != L for r in body):
        raise ConfigurationError(f"body is not {K} rows of {L} spins")
    return SpinConfig(body, K, L, q=q), q, h
