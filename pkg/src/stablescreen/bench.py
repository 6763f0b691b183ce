"""Synthetic experiments: problem generation, the three-way solver sweep and
CSV emission of traces, per-run summaries and plot-ready tables.

Every run of a sweep is identified by ``run_id`` and a ``variant`` column:
``plain`` (no screening), ``screened`` (conventional screening on the exact
dictionary) and ``fastl1``.  Wall-clock columns (``wall_ms``, ``T_*``,
``build_ms``) are the only non-deterministic outputs.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dictionary import SCENARIO_DECAY, build_sukro_sequence, kronecker_shape, synthesize_scenario
from .fastl1 import (
    GAMMA_PRESETS,
    ConvergenceError,
    SwitchConfig,
    TraceRecord,
    fastl1_solve,
    solve_plain,
    solve_screened,
)
from .screening import Rule
from .solver import STEPS

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "log_grid",
    "sample_sparse_code",
    "generate_problem",
    "build_approximations",
    "run_single",
    "run_sweep",
    "SweepResult",
    "TRACE_COLUMNS",
    "SUMMARY_COLUMNS",
    "AGGREGATE_COLUMNS",
    "write_traces",
    "read_traces",
    "summarize_runs",
    "aggregate_summary",
    "emit_plot_data",
    "PLOT_COLUMNS",
]

VARIANTS = ("plain", "screened", "fastl1")
MAX_RESAMPLES = 1000


class ConfigError(ValueError):
    pass


def log_grid(n_points=10, low=1e-2, high=1.0):
    """Log-spaced lambda / lambda_max ratios, rounded to 6 significant digits."""
    return tuple(float(f"{v:.6g}") for v in np.geomspace(low, high, n_points))


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 2500
    k: int = 10000
    scenario: str = "moderate"
    lambda_ratios: tuple = field(default_factory=log_grid)
    tol: float = 1e-5
    gamma: float = 0.5
    solver: str = "ista"
    rule: str = "gap"  # FastL1 uses the stable counterpart
    ranks: tuple = (5, 10, 15, 20)
    bernoulli_p: float = 0.02
    trials: int = 25
    seed: int = 0
    out: str = "results"
    screen_interval: int = 1
    precompute_aty: bool = False
    max_iter: int = 100_000
    jobs: int = 1
    factor_shape: tuple | None = None

    def __post_init__(self):
        for name in ("n", "k", "trials", "screen_interval", "max_iter", "jobs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.scenario not in SCENARIO_DECAY:
            raise ConfigError(f"scenario must be one of {sorted(SCENARIO_DECAY)}")
        if not self.lambda_ratios or any(not 0 < r <= 1 for r in self.lambda_ratios):
            raise ConfigError("lambda ratios must lie in (0, 1]")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.solver not in STEPS:
            raise ConfigError(f"solver must be one of {sorted(STEPS)}")
        try:
            Rule(self.rule)
        except ValueError:
            raise ConfigError(f"unknown rule {self.rule!r}") from None
        if not 0 <= self.bernoulli_p <= 1:
            raise ConfigError("bernoulli_p must lie in [0, 1]")
        ranks = list(self.ranks)
        if any(r < 1 for r in ranks) or any(b <= a for a, b in zip(ranks, ranks[1:])):
            raise ConfigError("ranks must be positive and strictly increasing")
        try:
            n1, k1, n2, k2 = kronecker_shape(self.n, self.k, self.factor_shape)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if ranks and ranks[-1] > min(n1 * k1, n2 * k2):
            raise ConfigError(f"rank {ranks[-1]} exceeds the Kronecker rank bound {min(n1 * k1, n2 * k2)}")

    @classmethod
    def from_mapping(cls, values):
        """Build from flat key/value pairs; CLI-style names are accepted."""
        aliases = {
            "N": "n", "K": "k", "lambda_grid": "lambda_ratios", "lambda_ratio": "lambda_ratios",
            "screen_interval": "screen_interval", "screening_interval": "screen_interval",
            "num_trials": "trials", "solver_kind": "solver", "rule_kind": "rule",
            "gamma_threshold": "gamma", "n_kron": "ranks", "output": "out",
        }
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in values.items():
            key = aliases.get(key, key.replace("-", "_"))
            if key not in names:
                raise ConfigError(f"unknown configuration key {key!r}")
            if value is None:
                continue
            if key == "lambda_ratios" and not isinstance(value, (list, tuple)):
                value = (value,)
            if key in ("lambda_ratios", "ranks", "factor_shape"):
                value = tuple(value)
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path, overrides=None):
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a flat JSON object")
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# -- data ---------------------------------------------------------------------


def sample_sparse_code(n_atoms, p, rng):
    """Bernoulli(p) support with standard Gaussian values.

    An empty support is redrawn; after ``MAX_RESAMPLES`` empty draws (p = 0)
    one uniformly random index is activated.
    """
    for _ in range(MAX_RESAMPLES):
        mask = rng.random(n_atoms) < p
        if mask.any():
            break
    else:
        mask = np.zeros(n_atoms, dtype=bool)
        mask[rng.integers(n_atoms)] = True
    x = np.zeros(n_atoms)
    x[mask] = rng.standard_normal(int(mask.sum()))
    return x


def _dictionary(config):
    return synthesize_scenario(config.n, config.k, config.scenario, config.seed, config.factor_shape)


def generate_problem(config, trial, dictionary=None):
    """Return ``(A, y, x_true)`` for one trial.

    The dictionary depends on ``config.seed`` only, so it is shared by all
    trials; the signal depends on ``(seed, trial)``.
    """
    A = dictionary if dictionary is not None else _dictionary(config)
    rng = np.random.default_rng([config.seed, trial])
    x_true = sample_sparse_code(A.n_atoms, config.bernoulli_p, rng)
    y = A.matvec(x_true)
    norm = np.linalg.norm(y)
    if norm == 0:
        raise ValueError("generated signal is zero")
    return A, y / norm, x_true


def build_approximations(config, A):
    """Approximation sequence and its build time in milliseconds."""
    start = time.perf_counter()
    seq = build_sukro_sequence(A, config.ranks, config.factor_shape)
    return seq, (time.perf_counter() - start) * 1e3


# -- runs ------------------------------------------------------------------------


def _run(fn):
    try:
        return fn(), False
    except ConvergenceError as exc:
        return exc.result, True


def run_single(config, A, sequence, y, lam_ratio, trial, run_id, variants=VARIANTS):
    """Solve one (lambda, trial) point with the requested variants.

    Returns ``{variant: (SolveResult, capped)}``.
    """
    lam_max = float(np.max(np.abs(A.rmatvec(y))))
    lam = lam_ratio * lam_max
    common = dict(run_id=run_id, trial=trial, lambda_ratio=lam_ratio)
    out = {}
    if "plain" in variants:
        out["plain"] = _run(lambda: solve_plain(A, y, lam, config.tol, config.solver, config.max_iter, **common))
    if "screened" in variants:
        out["screened"] = _run(
            lambda: solve_screened(A, y, lam, Rule(config.rule).conventional, config.tol, config.solver,
                                   config.max_iter, config.screen_interval, **common)
        )
    if "fastl1" in variants:
        switch = SwitchConfig(config.gamma, config.screen_interval, config.tol, config.max_iter,
                              config.precompute_aty)
        out["fastl1"] = _run(lambda: fastl1_solve(sequence, y, lam, switch, config.solver, config.rule, **common))
    return out


@dataclass
class SweepResult:
    traces: list
    summary: list
    aggregate: list
    build_ms: float
    paths: dict = field(default_factory=dict)

    @property
    def any_capped(self):
        return any(row["capped"] for row in self.summary)


def run_id_for(config, lambda_index, trial):
    return f"{config.scenario}-s{config.seed}-l{lambda_index:02d}-t{trial:03d}"


def run_sweep(config, out_dir=None, write=True, prebuilt=None):
    """Run plain, screened and FastL1 solves over the lambda grid and trials.

    Writes ``traces.csv``, ``summary.csv`` and ``aggregate.csv`` to
    ``out_dir`` (default ``config.out``) unless ``write`` is false.
    ``prebuilt`` may hold ``(A, sequence, build_ms)`` from an earlier build
    of the same configuration.
    """
    if prebuilt is None:
        A = _dictionary(config)
        sequence, build_ms = build_approximations(config, A)
    else:
        A, sequence, build_ms = prebuilt
    # warm the cached step sizes outside the timed loops
    A.lipschitz
    for d in sequence:
        d.lipschitz
    problems = {t: generate_problem(config, t, A)[1] for t in range(config.trials)}

    tasks = [
        (li, ratio, t)
        for li, ratio in enumerate(config.lambda_ratios)
        for t in range(config.trials)
    ]

    def work(task):
        li, ratio, t = task
        return task, run_single(config, A, sequence, problems[t], ratio, t, run_id_for(config, li, t))

    if config.jobs > 1:
        with ThreadPoolExecutor(config.jobs) as pool:
            done = list(pool.map(work, tasks))
    else:
        done = [work(task) for task in tasks]

    # single collector, in task order so outputs do not depend on scheduling
    traces = []
    results = []
    for (li, ratio, t), runs in done:
        for variant in VARIANTS:
            traces.extend(runs[variant][0].trace)
        results.append((run_id_for(config, li, t), ratio, t, runs))
    summary = summarize_runs(results, build_ms)
    aggregate = aggregate_summary(summary)
    result = SweepResult(traces, summary, aggregate, build_ms)
    if write:
        out = Path(out_dir if out_dir is not None else config.out)
        out.mkdir(parents=True, exist_ok=True)
        result.paths = {
            "traces": write_traces(traces, out / "traces.csv"),
            "summary": _write_rows(summary, SUMMARY_COLUMNS, out / "summary.csv"),
            "aggregate": _write_rows(aggregate, AGGREGATE_COLUMNS, out / "aggregate.csv"),
        }
        (out / "config.json").write_text(config.to_json())
    return result


# -- CSV ----------------------------------------------------------------------------

TRACE_COLUMNS = tuple(f.name for f in dataclasses.fields(TraceRecord))
_TRACE_TYPES = {f.name: f.type for f in dataclasses.fields(TraceRecord)}

SUMMARY_COLUMNS = (
    "run_id", "lambda_ratio", "trial",
    "F_N", "F_A", "F_T", "T_N", "T_A", "T_T",
    "FA_FN", "FT_FN", "TA_TN", "TT_TN",
    "iters_N", "iters_A", "iters_T", "gap_N", "gap_A", "gap_T",
    "capped", "build_ms",
)

RATIO_COLUMNS = ("FA_FN", "FT_FN", "TA_TN", "TT_TN")
AGGREGATE_COLUMNS = ("lambda_ratio", "n_runs", "n_capped") + tuple(
    f"{c}_{s}" for c in RATIO_COLUMNS for s in ("q25", "median", "q75")
)

NONDETERMINISTIC_COLUMNS = {"wall_ms", "T_N", "T_A", "T_T", "TA_TN", "TT_TN", "build_ms"} | {
    f"{c}_{s}" for c in ("TA_TN", "TT_TN") for s in ("q25", "median", "q75")
}


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(rows, columns, path):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if dataclasses.is_dataclass(row):
                row = dataclasses.asdict(row)
            writer.writerow([_fmt(row[c]) for c in columns])
    return path


def write_traces(traces, path):
    return _write_rows(traces, TRACE_COLUMNS, path)


def _parse(name, text):
    kind = _TRACE_TYPES[name]
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def read_traces(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [TraceRecord(**{k: _parse(k, v) for k, v in row.items()}) for row in reader]


def _ratio(num, den):
    return num / den if den else float("nan")


def summary_row(run_id, lambda_ratio, trial, plain, screened, fast, build_ms):
    """One summary row from ``(SolveResult, capped)`` pairs of the three variants."""
    (rn, cn), (ra, ca), (rt, ct) = plain, screened, fast
    return {
        "run_id": run_id,
        "lambda_ratio": lambda_ratio,
        "trial": trial,
        "F_N": rn.flops,
        "F_A": ra.flops,
        "F_T": rt.flops,
        "T_N": rn.wall_ms,
        "T_A": ra.wall_ms,
        "T_T": rt.wall_ms,
        "FA_FN": _ratio(ra.flops, rn.flops),
        "FT_FN": _ratio(rt.flops, rn.flops),
        "TA_TN": _ratio(ra.wall_ms, rn.wall_ms),
        "TT_TN": _ratio(rt.wall_ms, rn.wall_ms),
        "iters_N": rn.n_iter,
        "iters_A": ra.n_iter,
        "iters_T": rt.n_iter,
        "gap_N": rn.gap,
        "gap_A": ra.gap,
        "gap_T": rt.gap,
        "capped": cn or ca or ct,
        "build_ms": build_ms,
    }


def summarize_runs(results, build_ms=0.0):
    return [
        summary_row(run_id, ratio, t, runs["plain"], runs["screened"], runs["fastl1"], build_ms)
        for run_id, ratio, t, runs in results
    ]


def aggregate_summary(summary):
    """Median and 25/75 % percentiles of the ratio columns, per lambda."""
    by_lambda = {}
    for row in summary:
        by_lambda.setdefault(row["lambda_ratio"], []).append(row)
    out = []
    for ratio in sorted(by_lambda):
        rows = by_lambda[ratio]
        agg = {"lambda_ratio": ratio, "n_runs": len(rows), "n_capped": sum(bool(r["capped"]) for r in rows)}
        for c in RATIO_COLUMNS:
            q25, med, q75 = np.percentile([r[c] for r in rows], [25, 50, 75])
            agg[f"{c}_q25"], agg[f"{c}_median"], agg[f"{c}_q75"] = float(q25), float(med), float(q75)
        out.append(agg)
    return out


# -- plot data ---------------------------------------------------------------------

_KEY = ("run_id", "variant", "lambda_ratio", "trial")
PLOT_COLUMNS = {
    "gap_vs_iter": _KEY + ("iter", "dict_index", "gap"),
    "gap_vs_time": _KEY + ("wall_ms", "dict_index", "gap"),
    "flops_vs_iter": _KEY + ("iter", "flops_cum"),
    "active_vs_iter": _KEY + ("iter", "dict_index", "active_size"),
    "gap_bands": ("variant", "lambda_ratio", "iter", "n_runs", "gap_q25", "gap_median", "gap_q75"),
}


def gap_bands(traces):
    """Percentiles of the gap across trials, per variant, lambda and iteration.

    Rows without an exact gap (the -1 sentinel) are left out.
    """
    groups = {}
    for r in traces:
        if r.gap >= 0:
            groups.setdefault((r.variant, r.lambda_ratio, r.iter), []).append(r.gap)
    rows = []
    for (variant, ratio, it) in sorted(groups):
        gaps = groups[(variant, ratio, it)]
        q25, med, q75 = np.percentile(gaps, [25, 50, 75])
        rows.append({
            "variant": variant, "lambda_ratio": ratio, "iter": it, "n_runs": len(gaps),
            "gap_q25": float(q25), "gap_median": float(med), "gap_q75": float(q75),
        })
    return rows


def emit_plot_data(traces, out_dir):
    """Write one tidy CSV per figure family; returns ``{name: path}``.

    ``traces`` is a list of :class:`TraceRecord` or a path to a traces CSV.
    """
    if isinstance(traces, (str, Path)):
        traces = read_traces(traces)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, columns in PLOT_COLUMNS.items():
        rows = gap_bands(traces) if name == "gap_bands" else traces
        paths[name] = _write_rows(rows, columns, out / f"{name}.csv")
    return paths
