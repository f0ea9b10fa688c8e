"""Monte Carlo experiment drivers, spec files and CSV/JSON persistence.

Spec files are INI-style (read with :mod:`configparser`)::

    [model]
    q = 3
    K = 9
    L = 9
    h = 0.9

    [run]
    betas = 2.5, 3.0, 3.5, 4.0
    replicas = 100
    seed = 42
    # optional: step_cap, method (rejection-free | metropolis), target, threads

    [observers]
    gate = true
    tube = true

    [output]
    raw = raw.csv
    summary = summary.json
"""

from __future__ import annotations

import configparser
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import io
import json
import math
import os
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .dynamics import METHODS, HittingRecord, simulate_hitting
from .landscape import gamma_m, prefactor
from .lattice import ModelParams, energy_of_grid

THREADS_ENV = "POTTSMETA_THREADS"
RAW_COLUMNS = (
    "seed", "beta", "q", "K", "L", "h", "replica", "hitting_time", "hit_color",
    "crossed_gate", "exited_tube", "above_barrier", "truncated",
)


class SpecError(ValueError):
    """Malformed or inconsistent experiment spec."""


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise SpecError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class ExperimentSpec:
    q: int
    K: int
    L: int
    h: float
    betas: tuple[float, ...]
    replicas: int
    seed: int = 0
    step_cap: Optional[int] = None
    method: str = "rejection-free"
    target: int = 0
    observe_gate: bool = True
    observe_tube: bool = True
    raw_path: Optional[str] = None
    summary_path: Optional[str] = None
    threads: int = 1

    def __post_init__(self) -> None:
        if self.replicas < 1:
            raise SpecError("replicas must be at least 1")
        if not self.betas:
            raise SpecError("at least one beta is required")
        if any(b2 <= b1 for b1, b2 in zip(self.betas, self.betas[1:])):
            raise SpecError("betas must be strictly increasing")
        if self.step_cap is not None and self.step_cap < 1:
            raise SpecError("step_cap must be at least 1")
        if self.method not in METHODS:
            raise SpecError(f"method must be one of {METHODS}")
        if self.threads < 1:
            raise SpecError("threads must be at least 1")

    def params(self, beta: float) -> ModelParams:
        return ModelParams(self.q, self.K, self.L, self.h, beta)


def parse_spec(text: str) -> ExperimentSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
        m, r = cp["model"], cp["run"]
        obs = cp["observers"] if cp.has_section("observers") else {}
        out = cp["output"] if cp.has_section("output") else {}
        cap = r.get("step_cap")
        return ExperimentSpec(
            q=int(m["q"]), K=int(m["K"]), L=int(m["L"]), h=float(m["h"]),
            betas=tuple(float(x) for x in r["betas"].split(",") if x.strip()),
            replicas=int(r["replicas"]),
            seed=int(r.get("seed", "0")),
            step_cap=int(float(cap)) if cap else None,
            method=r.get("method", "rejection-free").strip(),
            target=int(r.get("target", "0")),
            observe_gate=_flag(obs.get("gate", "true")),
            observe_tube=_flag(obs.get("tube", "true")),
            raw_path=out.get("raw"),
            summary_path=out.get("summary"),
            threads=int(r.get("threads", str(default_threads()))),
        )
    except (configparser.Error, KeyError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"bad spec: {exc}") from None


def _flag(x: str) -> bool:
    v = str(x).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise SpecError(f"not a boolean: {x!r}")


def load_spec(path: str | Path) -> ExperimentSpec:
    return parse_spec(Path(path).read_text())


# ---------------------------------------------------------------------------
# Running replicas


@dataclass(frozen=True)
class ReplicaRow:
    seed: int
    beta: float
    q: int
    K: int
    L: int
    h: float
    replica: int
    hitting_time: int
    hit_color: Optional[int]
    crossed_gate: Optional[bool]
    exited_tube: Optional[bool]
    above_barrier: bool
    truncated: bool


def _row(spec: ExperimentSpec, params: ModelParams, rec: HittingRecord) -> ReplicaRow:
    base = energy_of_grid(np.ones((params.K, params.L), dtype=np.int8))
    level = (base + gamma_m(params)).key(params)
    return ReplicaRow(
        spec.seed, params.beta, params.q, params.K, params.L, params.h, rec.replica,
        rec.hitting_time, rec.hit_state_class, rec.crossed_gate, rec.exited_tube,
        rec.max_energy_seen.key(params) > level, rec.truncated,
    )


def run_replicas(spec: ExperimentSpec, beta: float) -> list[ReplicaRow]:
    """All replicas at one beta, ordered by replica index whatever the thread count."""
    params = spec.params(beta)

    def one(k: int) -> ReplicaRow:
        rec = simulate_hitting(
            params, spec.seed, k, target=spec.target, step_cap=spec.step_cap,
            method=spec.method, observe_gate=spec.observe_gate, observe_tube=spec.observe_tube,
        )
        return _row(spec, params, rec)

    if spec.threads == 1:
        return [one(k) for k in range(spec.replicas)]
    with ThreadPoolExecutor(spec.threads) as pool:
        return list(pool.map(one, range(spec.replicas)))


# ---------------------------------------------------------------------------
# Summaries


@dataclass
class BetaSummary:
    beta: float
    replicas: int
    truncated: int
    valid: bool
    mean_tau: Optional[float]
    var_tau: Optional[float]
    ks_statistic: Optional[float]
    gate_fraction: Optional[float]
    tube_exit_fraction: Optional[float]
    above_barrier_fraction: float
    color_frequencies: dict
    scaled_mean: Optional[float]  # exp(-beta*Gamma) * mean tau
    scaled_mean_per_q: Optional[float]
    scaled_mean_per_move: Optional[float]  # divided by q*|V|


@dataclass
class ExperimentSummary:
    q: int
    K: int
    L: int
    h: float
    gamma_m: float
    k_neg: str
    seed: int
    method: str
    per_beta: list[BetaSummary]
    slope: Optional[float]
    slope_ci: Optional[tuple[float, float]]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _fraction(rows: Sequence[ReplicaRow], attr: str) -> Optional[float]:
    vals = [getattr(r, attr) for r in rows]
    if any(v is None for v in vals) or not vals:
        return None
    return float(np.mean(vals))


def summarize_beta(rows: Sequence[ReplicaRow], params: ModelParams) -> BetaSummary:
    """Statistics over non-truncated replicas; truncated ones are counted, not merged."""
    done = [r for r in rows if not r.truncated]
    n_trunc = len(rows) - len(done)
    gamma = params.value(gamma_m(params))
    colors: dict[str, float] = {}
    if done:
        tau = np.array([r.hitting_time for r in done], dtype=float)
        mean = float(tau.mean())
        var = float(tau.var(ddof=1)) if tau.size > 1 else None
        ks = float(stats.kstest(tau / mean, "expon").statistic) if tau.size > 1 else None
        for s in range(2, params.q + 1):
            colors[str(s)] = float(np.mean([r.hit_color == s for r in done]))
        scaled = math.exp(-params.beta * gamma) * mean
    else:
        mean = var = ks = scaled = None
    return BetaSummary(
        beta=params.beta,
        replicas=len(rows),
        truncated=n_trunc,
        valid=bool(done),
        mean_tau=mean,
        var_tau=var,
        ks_statistic=ks,
        gate_fraction=_fraction(done, "crossed_gate"),
        tube_exit_fraction=_fraction(done, "exited_tube"),
        above_barrier_fraction=float(np.mean([r.above_barrier for r in done])) if done else 0.0,
        color_frequencies=colors,
        scaled_mean=scaled,
        scaled_mean_per_q=None if scaled is None else scaled / params.q,
        scaled_mean_per_move=None if scaled is None else scaled / (params.q * params.n_sites),
    )


def fit_slope(betas: Sequence[float], means: Sequence[float], level: float = 0.95):
    """Least-squares slope of ln(mean tau) against beta with a t-interval."""
    if len(betas) < 2:
        return None, None
    fit = stats.linregress(np.asarray(betas, float), np.log(np.asarray(means, float)))
    if len(betas) == 2:
        return float(fit.slope), None
    t = stats.t.ppf(0.5 + level / 2, len(betas) - 2)
    return float(fit.slope), (float(fit.slope - t * fit.stderr), float(fit.slope + t * fit.stderr))


def summarize(spec: ExperimentSpec, rows_by_beta: dict[float, list[ReplicaRow]]) -> ExperimentSummary:
    per_beta = [summarize_beta(rows_by_beta[b], spec.params(b)) for b in spec.betas]
    ok = [s for s in per_beta if s.valid]
    slope, ci = fit_slope([s.beta for s in ok], [s.mean_tau for s in ok])
    p0 = spec.params(spec.betas[0])
    return ExperimentSummary(
        spec.q, spec.K, spec.L, spec.h, p0.value(gamma_m(p0)), str(prefactor(p0)[0]),
        spec.seed, spec.method, per_beta, slope, ci,
    )


def rows_to_csv(rows: Sequence[ReplicaRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for r in rows:
        w.writerow(["" if getattr(r, c) is None else _csv_value(getattr(r, c)) for c in RAW_COLUMNS])
    return buf.getvalue()


def _csv_value(x):
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, float):
        return repr(x)
    return x


def rows_from_csv(text: str) -> list[ReplicaRow]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        def opt_bool(key):
            return None if rec[key] == "" else bool(int(rec[key]))

        out.append(ReplicaRow(
            int(rec["seed"]), float(rec["beta"]), int(rec["q"]), int(rec["K"]), int(rec["L"]),
            float(rec["h"]), int(rec["replica"]), int(rec["hitting_time"]),
            None if rec["hit_color"] == "" else int(rec["hit_color"]),
            opt_bool("crossed_gate"), opt_bool("exited_tube"),
            bool(int(rec["above_barrier"])), bool(int(rec["truncated"])),
        ))
    return out


# ---------------------------------------------------------------------------
# Drivers


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[ReplicaRow]
    summary: ExperimentSummary
    extras: dict = field(default_factory=dict)

    def write(self, raw_path: Optional[str] = None, summary_path: Optional[str] = None) -> None:
        raw_path = raw_path or self.spec.raw_path
        summary_path = summary_path or self.spec.summary_path
        if raw_path:
            Path(raw_path).write_text(rows_to_csv(self.rows))
        if summary_path:
            doc = json.loads(self.summary.to_json())
            doc.update(self.extras)
            Path(summary_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_hitting_experiment(spec: ExperimentSpec) -> ExperimentResult:
    rows_by_beta = {b: run_replicas(spec, b) for b in spec.betas}
    rows = [r for b in spec.betas for r in rows_by_beta[b]]
    return ExperimentResult(spec, rows, summarize(spec, rows_by_beta))


def run_gate_experiment(spec: ExperimentSpec) -> dict[float, Optional[float]]:
    """Fraction of replicas that visit a G1/G2 configuration before the first stable hit."""
    res = run_hitting_experiment(_with(spec, observe_gate=True, observe_tube=False))
    return {s.beta: s.gate_fraction for s in res.summary.per_beta}


def run_tube_experiment(spec: ExperimentSpec) -> dict:
    """Tube-exit fraction per beta, with the slope of its logarithm."""
    res = run_hitting_experiment(_with(spec, observe_gate=False, observe_tube=True))
    frac = {s.beta: s.tube_exit_fraction for s in res.summary.per_beta}
    pos = [(b, f) for b, f in frac.items() if f]
    slope = (float(stats.linregress([b for b, _ in pos], np.log([f for _, f in pos])).slope)
             if len(pos) >= 2 else None)
    return {"fractions": frac, "log_slope": slope,
            "above_barrier": {s.beta: s.above_barrier_fraction for s in res.summary.per_beta}}


NORMALIZATIONS = ("raw", "per_q", "per_move")


def run_prefactor_experiment(spec: ExperimentSpec) -> dict:
    """exp(-beta Gamma) * mean tau against K_neg under three time normalisations.

    ``per_move`` divides by q|V|, the number of (site, spin) proposals, so one
    unit is one attempted update per proposal; ``per_q`` divides by q only.
    The matching normalisation is the one whose ratio at the largest beta is
    closest to one on a log scale.
    """
    res = run_hitting_experiment(_with(spec, observe_gate=False, observe_tube=False))
    k_neg = float(prefactor(spec.params(spec.betas[0]))[0])
    table = []
    for s in res.summary.per_beta:
        vals = {"raw": s.scaled_mean, "per_q": s.scaled_mean_per_q, "per_move": s.scaled_mean_per_move}
        table.append({
            "beta": s.beta,
            "truncated": s.truncated,
            **{f"scaled_{k}": v for k, v in vals.items()},
            **{f"ratio_{k}": (None if v is None else v / k_neg) for k, v in vals.items()},
        })
    last = table[-1]
    match = min(NORMALIZATIONS, key=lambda k: abs(math.log(last[f"ratio_{k}"]))
                if last[f"ratio_{k}"] else math.inf)
    ratios = [row[f"ratio_{match}"] for row in table]
    diffs = np.diff(ratios)
    monotone = bool((diffs <= 0).all() or (diffs >= 0).all())
    return {"k_neg": k_neg, "table": table, "matching": match,
            "within_factor_3": bool(1 / 3 <= ratios[-1] <= 3), "monotone": monotone}


def _with(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    d = asdict(spec)
    d.update(changes)
    d["betas"] = tuple(d["betas"])
    return ExperimentSpec(**d)
