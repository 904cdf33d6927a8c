"""Experiment harness: config, parallel trials, aggregation, file output.

Reproducibility rules: trial j of an experiment runs with the seed
mix_seed(base_seed, j), so results are independent of scheduling; the
aggregate is a pure function of the ordered trial list; and emitted files
are byte-stable for identical configs.  Wall-clock timing is therefore kept
out of emitted files unless explicitly requested (the runtime_ms column is
written as 0 in the default stable mode).
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .core import (ConfigError, TrialResult, make_pools, mix_seed, run_trial)
from .strategies import make_strategy
from .theory import beta_sequence, ell


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: n bins (or a grid), floor(rho*n) balls, many trials."""

    n: int | None = None
    d: int = 2
    rho: str = "1"
    strategy: str = "threshold"
    trials: int = 1
    seed: int = 0
    threads: int = 1
    n_grid: tuple[int, ...] = ()
    out: str | None = None
    fmt: str = "csv"

    def validated(self) -> "ExperimentConfig":
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if Fraction(self.rho) <= 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if self.fmt not in ("csv", "json", "plotdata"):
            raise ConfigError(f"unknown output format {self.fmt!r}")
        return self


def balls_from_rho(rho: str, n: int) -> int:
    """floor(rho*n) in exact integer arithmetic from the decimal rho string."""
    frac = Fraction(rho)
    if frac <= 0:
        raise ConfigError(f"rho must be positive, got {rho}")
    return (frac.numerator * n) // frac.denominator


@dataclass(frozen=True)
class AggregateResult:
    """Per-config summary over all trials.

    r_means holds the mean rejection counters for rounds 2..d (round 1 is
    always the ball count).  runtime_ms is wall-clock metadata, excluded
    from equality.
    """

    n: int
    d: int
    rho: str
    m: int
    strategy: str
    trials: int
    seed: int
    maxload_mean: float
    maxload_min: int
    maxload_p50: int
    maxload_p95: int
    maxload_p99: int
    maxload_max: int
    ell: float
    ratio_to_dell: float
    r_means: tuple[float, ...]
    phi_mean: float
    psi_mean: float
    frac_r_le_beta: float
    runtime_ms: float = field(compare=False, default=0.0)

    def to_dict(self, include_runtime: bool = False) -> dict:
        return {
            "n": self.n, "d": self.d, "rho": self.rho, "m": self.m,
            "strategy": self.strategy, "trials": self.trials, "seed": self.seed,
            "maxload_mean": self.maxload_mean, "maxload_min": self.maxload_min,
            "maxload_p50": self.maxload_p50, "maxload_p95": self.maxload_p95,
            "maxload_p99": self.maxload_p99, "maxload_max": self.maxload_max,
            "ell": self.ell, "ratio_to_dell": self.ratio_to_dell,
            "r_means": list(self.r_means),
            "phi_mean": self.phi_mean, "psi_mean": self.psi_mean,
            "frac_r_le_beta": self.frac_r_le_beta,
            "runtime_ms": self.runtime_ms if include_runtime else 0.0,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AggregateResult":
        fields = dict(data)
        fields["r_means"] = tuple(fields["r_means"])
        return cls(**fields)


def nearest_rank(sorted_values, pct: float):
    """Nearest-rank percentile: the ceil(pct/100 * N)-th smallest value."""
    if not sorted_values:
        raise ValueError("percentile of an empty sample")
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def aggregate(trial_results: list[TrialResult], config: ExperimentConfig,
              m: int, runtime_ms: float = 0.0) -> AggregateResult:
    maxes = sorted(r.max_load for r in trial_results)
    trials = len(trial_results)
    d = config.d
    n = config.n

    if n >= 3:
        l = ell(n, d)
        ratio = (sum(maxes) / trials) / (d * l) if m else 0.0
        betas = beta_sequence(n, d, float(Fraction(config.rho))).values
        ok = sum(
            1 for r in trial_results
            if all(r.rejection_counters[i] <= betas[i] for i in range(1, d))
        )
        frac_r_le_beta = ok / trials
    else:
        l = math.nan
        ratio = math.nan
        frac_r_le_beta = math.nan

    r_means = tuple(
        sum(r.rejection_counters[i] for r in trial_results) / trials
        for i in range(1, d)
    )
    return AggregateResult(
        n=n, d=d, rho=config.rho, m=m, strategy=config.strategy,
        trials=trials, seed=config.seed,
        maxload_mean=sum(maxes) / trials,
        maxload_min=maxes[0],
        maxload_p50=nearest_rank(maxes, 50),
        maxload_p95=nearest_rank(maxes, 95),
        maxload_p99=nearest_rank(maxes, 99),
        maxload_max=maxes[-1],
        ell=l,
        ratio_to_dell=ratio,
        r_means=r_means,
        phi_mean=sum(r.phi for r in trial_results) / trials,
        psi_mean=sum(r.psi for r in trial_results) / trials,
        frac_r_le_beta=frac_r_le_beta,
        runtime_ms=runtime_ms,
    )


def run_experiment(config: ExperimentConfig, keep_trials: bool = False):
    """Run all trials of one config; deterministic in the config alone."""
    config = config.validated()
    if config.n is None:
        raise ConfigError("run_experiment needs a single n (use sweep for grids)")
    m = balls_from_rho(config.rho, config.n)
    strategy = make_strategy(config.strategy, config.n, config.d)
    start = time.perf_counter()

    def one(trial_index: int) -> TrialResult:
        return run_trial(config.n, config.d, m, strategy,
                         mix_seed(config.seed, trial_index))

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(one, range(config.trials)))
    else:
        results = [one(j) for j in range(config.trials)]

    runtime_ms = (time.perf_counter() - start) * 1e3
    agg = aggregate(results, config, m, runtime_ms)
    if keep_trials:
        return agg, results
    return agg


def sweep(config: ExperimentConfig) -> list[AggregateResult]:
    """One aggregate per n in the grid (each with its ratio-to-d*ell column)."""
    config = config.validated()
    if not config.n_grid:
        raise ConfigError("sweep needs a non-empty n grid")
    if any(n < 3 for n in config.n_grid):
        raise ConfigError("sweep grid values must be >= 3 (the d*ell overlay "
                          "needs ln ln n > 0)")
    out = []
    for n in config.n_grid:
        out.append(run_experiment(replace(config, n=n, n_grid=())))
    return out


def run_greedy_d_choice(n: int, d: int, m: int, seed: int) -> TrialResult:
    """d-choice greedy baseline: least-loaded of d fresh uniform offers.

    Observes all d offers at once, which no thinning strategy may do, so it
    lives here as a comparison allocator rather than as a Strategy.  Ties go
    to the lowest bin index.
    """
    if m < 0:
        raise ConfigError(f"ball count must be >= 0, got {m}")
    pools, _ = make_pools(n, d, seed)
    start = time.perf_counter()
    columns = [pools[i].take(m).tolist() for i in range(d)]
    loads = [0] * n
    if d == 1:
        for b in columns[0]:
            loads[b] += 1
    elif d == 2:
        col_a, col_b = columns
        for a, b in zip(col_a, col_b):
            la, lb = loads[a], loads[b]
            if lb < la or (lb == la and b < a):
                a = b
            loads[a] += 1
    else:
        for offers in zip(*columns):
            best = min(offers, key=lambda b: (loads[b], b))
            loads[best] += 1
    wall_ms = (time.perf_counter() - start) * 1e3

    loads_arr = np.asarray(loads, dtype=np.int64)
    counts = np.bincount(loads_arr)
    histogram = {int(v): int(c) for v, c in enumerate(counts) if c > 0}
    zeros = [0] * (d - 1)
    return TrialResult(
        n=n, d=d, m=m,
        strategy=f"greedy-{d}-choice",
        seed=seed,
        max_load=int(loads_arr.max()),
        histogram=histogram,
        rejection_counters=tuple([m] + zeros),
        phi=int((loads_arr > 0).sum()),
        psi=int(np.unique(np.asarray(columns[0], dtype=np.int64)).size) if m else 0,
        chosen_counts=tuple([m] + zeros),
        round_load_max=tuple([int(loads_arr.max())] + zeros),
        wall_ms=wall_ms,
    )


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_header(d: int) -> list[str]:
    head = ["n", "d", "rho", "m", "strategy", "trials", "seed",
            "maxload_mean", "maxload_min", "maxload_p50", "maxload_p95",
            "maxload_p99", "maxload_max", "ell", "ratio_to_dell"]
    head += [f"r{i}_mean" for i in range(2, d + 1)]
    head += ["phi", "psi", "frac_r_le_beta", "runtime_ms"]
    return head


def _csv_row(r: AggregateResult, include_runtime: bool) -> list[str]:
    row = [r.n, r.d, r.rho, r.m, r.strategy, r.trials, r.seed,
           r.maxload_mean, r.maxload_min, r.maxload_p50, r.maxload_p95,
           r.maxload_p99, r.maxload_max, r.ell, r.ratio_to_dell]
    row += list(r.r_means)
    row += [r.phi_mean, r.psi_mean, r.frac_r_le_beta,
            r.runtime_ms if include_runtime else 0.0]
    return [_format_value(v) for v in row]


def emit(results, fmt: str, path, include_runtime: bool = False) -> None:
    """Write aggregates as csv, json or plotdata; bytes depend only on inputs.

    Wall-clock runtime is suppressed (written as 0) unless include_runtime
    is set, so identical configs always reproduce identical files.
    """
    if isinstance(results, AggregateResult):
        results = [results]
    if not results:
        raise ConfigError("emit needs at least one result")
    try:
        if fmt == "csv":
            d = results[0].d
            if any(r.d != d for r in results):
                raise ConfigError("csv output needs a single d across rows")
            with open(path, "w", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(csv_header(d))
                for r in results:
                    writer.writerow(_csv_row(r, include_runtime))
        elif fmt == "json":
            payload = [r.to_dict(include_runtime) for r in results]
            with open(path, "w", newline="\n") as f:
                f.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        elif fmt == "plotdata":
            with open(path, "w", newline="\n") as f:
                f.write("# n maxload_mean d_ell\n")
                for r in results:
                    f.write(f"{r.n} {_format_value(r.maxload_mean)} "
                            f"{_format_value(r.d * r.ell)}\n")
        else:
            raise ConfigError(f"unknown output format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write {fmt} output to {path}: {exc}") from exc


def load_results_json(path) -> list[AggregateResult]:
    with open(path) as f:
        payload = json.load(f)
    return [AggregateResult.from_dict(item) for item in payload]
