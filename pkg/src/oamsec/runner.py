"""Outer loop coupling the mean-field solve to the adversary model.

One outer iteration solves the fixed point of the control system, then (in
the second problem) refreshes the adversary drift through the augmented
control law, and finally evaluates the stopping residual

    | bhat(v+) + theta(T; bhat(v)) - q |

where bhat(v) is the mean of the final density row, bhat(v+) its one-step
linear extrapolation, and q the extinction probability (0 in the first
problem).  The residual mixes a state, a control value, and a probability;
that heterogeneity is by construction and kept as written.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field as dc_field, is_dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, OamsecError, StateError
from .hawkes import AdversaryState, HawkesModel, eve_control_law, simulate_hawkes
from .mfg import MFGField, MFGGrid, NoiseSpec, gaussian_density, picard_solve

__all__ = [
    "AlgorithmConfig",
    "RunRecord",
    "RunAborted",
    "stopping_residual",
    "run_algorithm1",
    "nash_gap_diagnostic",
    "emit_run",
    "config_hash",
    "with_seed",
]

_OUTER_KEY = 101       # spawn key namespace for per-iteration noise seeds
_HAWKES_KEY = 202      # spawn key for the adversary realization


@dataclass(frozen=True)
class AlgorithmConfig:
    """Everything one outer run needs; hashable into a manifest."""

    grid: MFGGrid
    mode: str = "P1"
    r_conv: float = 1e-3
    max_outer: int = 30
    m0_center: float = 0.5
    m0_width: float = 0.1
    lambda_reg: float = 1.0
    theta_bounds: tuple[float, float] = (-10.0, 10.0)
    damping: float = 1.0
    picard_tol: float = 1e-6
    picard_max_iter: int = 50
    hawkes_gamma: float = 1.0
    hawkes_alpha: float = 0.0
    hawkes_beta: float = 1.0
    eve_mode: str = "extinction"
    noise: NoiseSpec = dc_field(default_factory=NoiseSpec)
    emit_path: str | None = None

    def __post_init__(self):
        if self.mode not in ("P1", "P2"):
            raise InvalidInputError("mode must be 'P1' or 'P2'")
        if not (self.r_conv > 0 and math.isfinite(self.r_conv)):
            raise InvalidInputError("r_conv must be positive")
        if self.max_outer < 1:
            raise InvalidInputError("max_outer must be >= 1")
        if self.eve_mode not in ("extinction", "compensated"):
            raise InvalidInputError("eve_mode must be 'extinction' or 'compensated'")


@dataclass(frozen=True)
class RunRecord:
    """Trail entry for one outer iteration."""

    iteration: int
    residual: float
    theta_bar: np.ndarray
    converged: bool
    wall_time: float
    seed: int


class RunAborted(OamsecError):
    """Inner solver failure; carries the partial record trail."""

    def __init__(self, message: str, records: list[RunRecord]):
        super().__init__(message)
        self.records = records


def with_seed(config: AlgorithmConfig, seed: int) -> AlgorithmConfig:
    """Copy of the config with the master noise seed replaced."""
    return replace(config, noise=replace(config.noise, seed=seed))


def _row_mean(xs: np.ndarray, row: np.ndarray, dx: float) -> float:
    total = float(row.sum()) * dx
    if total <= 0.0:
        return 0.0
    return float((xs * row).sum()) * dx / total


def stopping_residual(field: MFGField, adversary: AdversaryState | None,
                      grid: MFGGrid | None = None) -> float:
    """Terminal-time residual of the outer loop.

    The extinction term is the adversary's q, or 0 when no adversary is
    attached (first problem).
    """
    if not field.solved:
        raise StateError("stopping residual needs a solved field")
    grid = grid if grid is not None else field.grid
    xs = grid.xs
    mean_t = _row_mean(xs, field.m[-1], grid.dx)
    mean_prev = _row_mean(xs, field.m[-2], grid.dx) if grid.nt >= 2 else mean_t
    mean_next = mean_t + (mean_t - mean_prev)
    xq = min(max(mean_t, grid.x_min), grid.x_max)
    theta_term = float(np.interp(xq, xs, field.theta[-1]))
    p_ext = adversary.extinction_prob if adversary is not None else 0.0
    return abs(mean_next + theta_term - p_ext)


def _iteration_seed(base_seed: int, iteration: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(_OUTER_KEY, iteration))
    return int(ss.generate_state(1)[0])


def run_algorithm1(config: AlgorithmConfig) -> list[RunRecord]:
    """Outer loop: solve, refresh adversary drift (P2), test the residual.

    Deterministic under the config seed: every outer iteration draws its
    noise from a spawned substream, and the adversary realization has its
    own substream.  Returns the full record trail; on inner failure raises
    RunAborted with the partial trail attached.
    """
    grid = config.grid
    m0 = gaussian_density(grid, config.m0_center, config.m0_width)

    adversary = None
    extra_drift = None
    if config.mode == "P2":
        model = HawkesModel.univariate(config.hawkes_gamma, config.hawkes_alpha,
                                       config.hawkes_beta, horizon=grid.t_max)
        hseed = int(np.random.SeedSequence(
            config.noise.seed, spawn_key=(_HAWKES_KEY,)).generate_state(1)[0])
        hstate = simulate_hawkes(model, hseed, allow_supercritical=True)
        adversary = AdversaryState.from_offspring_mean(
            model.branching_ratio, r_conv=config.r_conv,
            hawkes_model=model, hawkes_state=hstate)

    records: list[RunRecord] = []
    theta_bar0 = None
    field = None
    for it in range(1, config.max_outer + 1):
        tick = time.perf_counter()
        seed_it = _iteration_seed(config.noise.seed, it)
        noise_it = replace(config.noise, seed=seed_it)
        try:
            result = picard_solve(
                grid, m0,
                lambda_reg=config.lambda_reg,
                theta_bounds=config.theta_bounds,
                noise=noise_it,
                damping=config.damping,
                tol=config.picard_tol,
                max_iter=config.picard_max_iter,
                theta_bar0=theta_bar0,
                extra_drift=extra_drift,
            )
            field = result.field
            theta_bar0 = field.theta_bar
            if config.mode == "P2":
                traj = eve_control_law(grid, field.theta, adversary, noise_it,
                                       mode=config.eve_mode)
                extra_drift = traj.drift
            residual = stopping_residual(field, adversary, grid)
        except OamsecError as exc:
            raise RunAborted(f"outer iteration {it}: {exc}", records) from exc
        if not math.isfinite(residual):
            raise RunAborted(f"outer iteration {it}: residual not finite",
                             records)
        converged = residual <= config.r_conv
        records.append(RunRecord(
            iteration=it, residual=residual,
            theta_bar=field.theta_bar.copy(), converged=converged,
            wall_time=time.perf_counter() - tick, seed=seed_it,
        ))
        if converged:
            break

    if config.emit_path is not None:
        emit_run(records, field, config.emit_path, config=config,
                 adversary=adversary)
    return records


# --------------------------------------------------------------------------
# equilibrium diagnostic
# --------------------------------------------------------------------------

def _agent_cost(field: MFGField, grid: MFGGrid, x0: float,
                offsets: np.ndarray | None) -> float:
    """Discrete cost of one agent following the field's feedback law plus
    an additive control offset, against the frozen population."""
    lo, hi = field.theta_bounds
    xs = grid.xs
    dt = grid.dt
    x = x0
    cost = 0.0
    for n in range(grid.nt - 1):
        xc = min(max(x, grid.x_min), grid.x_max)
        th = float(np.interp(xc, xs, field.theta[n]))
        if offsets is not None:
            th = min(max(th + offsets[n], lo), hi)
        cost += dt * ((xc - field.theta_bar[n])
                      + 0.5 * field.lambda_reg * th * th)
        x = x - dt * th
    xc = min(max(x, grid.x_min), grid.x_max)
    return cost + float(np.interp(xc, xs, field.u[-1]))


def nash_gap_diagnostic(field: MFGField, grid: MFGGrid | None = None,
                        deviations: int = 100, seed: int = 0,
                        scale: float = 1.0) -> float:
    """Largest cost improvement a unilateral control deviation can buy.

    Each deviation adds a random constant offset plus per-step jitter to
    the feedback law of a representative agent started at the initial
    population mean.  At an equilibrium no deviation profits, so the gap
    stays at discretization level.  Positive gap = profitable deviation.
    """
    if not field.converged:
        raise StateError("diagnostic needs a converged field")
    grid = grid if grid is not None else field.grid
    if deviations < 0:
        raise InvalidInputError("deviations must be >= 0")
    if deviations == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x0 = _row_mean(grid.xs, field.m[0], grid.dx)
    base_cost = _agent_cost(field, grid, x0, None)
    gap = -math.inf
    for _ in range(deviations):
        const = rng.uniform(-scale, scale)
        jitter = rng.normal(0.0, scale / 4.0, grid.nt - 1)
        cost = _agent_cost(field, grid, x0, const + jitter)
        gap = max(gap, base_cost - cost)
    return gap


# --------------------------------------------------------------------------
# artifact emission
# --------------------------------------------------------------------------

def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def config_hash(config) -> str:
    """Stable short hash of any (possibly nested) dataclass config.

    The artifact destination is not part of the experiment identity, so a
    top-level ``emit_path`` is excluded.
    """
    payload = _jsonable(config)
    if isinstance(payload, dict):
        payload = {k: v for k, v in payload.items() if k != "emit_path"}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def emit_run(records: Sequence[RunRecord], field: MFGField | None,
             out_dir: str | Path, *, config: AlgorithmConfig | None = None,
             adversary: AdversaryState | None = None,
             bound_report=None, snr_table=None) -> dict:
    """Write the per-run artifact set; byte-stable under a fixed seed.

    Emits residuals.csv (iteration series), theta_bar.csv (final mean
    control), optional bounds.csv and snr_ber.csv tables, and a
    manifest.json.  Wall-clock times never enter the files, which keeps
    reruns byte-identical.
    """
    if not records:
        raise InvalidInputError("no records to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "residuals.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "residual", "converged", "seed"])
        for rec in records:
            writer.writerow([rec.iteration, repr(rec.residual),
                             int(rec.converged), rec.seed])

    if field is not None:
        times = field.grid.times
        with open(out / "theta_bar.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "theta_bar"])
            for t, tb in zip(times, field.theta_bar):
                writer.writerow([repr(float(t)), repr(float(tb))])

    if bound_report is not None:
        with open(out / "bounds.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["a", "b", "c", "p1", "p2", "varrho",
                             "complexity"])
            writer.writerow([repr(bound_report.a), repr(bound_report.b),
                             repr(bound_report.c), repr(bound_report.p1),
                             repr(bound_report.p2), repr(bound_report.varrho),
                             repr(bound_report.complexity)])

    if snr_table is not None:
        with open(out / "snr_ber.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trunc", "snr", "ber"])
            for trunc, snr, ber in snr_table:
                writer.writerow([trunc, repr(float(snr)), repr(float(ber))])

    manifest = {
        "config_hash": config_hash(config) if config is not None else None,
        "seed": config.noise.seed if config is not None else None,
        "mode": config.mode if config is not None else None,
        "converged": bool(records[-1].converged),
        "iterations": len(records),
        "final_residual": records[-1].residual,
    }
    if adversary is not None:
        manifest["offspring_mean"] = adversary.offspring_mean
        manifest["extinction_prob"] = adversary.extinction_prob
        if adversary.offspring_mean > 1.0:
            manifest["supercritical"] = True
    with open(out / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
