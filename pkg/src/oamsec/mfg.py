"""Coupled HJB / transport solver for the mean-field control of the gain.

The population state is the running estimate x = beta_hat_X of the control
gain.  Each agent controls a drift -theta, pays the running cost
x - theta_bar(t) + (lambda/2) theta^2, and the population density follows
the matching transport equation.  The two PDEs are coupled through the mean
control theta_bar(t) and solved by damped Picard iteration.

Numerics: upwind differencing for transport, explicit first-order stepping
for the advective and source terms (with a CFL guard), and implicit
backward-Euler diffusion so the noise amplitude never restricts the time
step.  Monte Carlo (Feynman-Kac) and convexity (Hermite-Hadamard) oracles
are provided for independent verification of the value function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_banded

from .errors import (
    ExtrapolationError,
    InvalidInputError,
    StabilityError,
)

__all__ = [
    "MFGGrid",
    "NoiseSpec",
    "MFGField",
    "FeynmanKacSpec",
    "FKEstimate",
    "PicardResult",
    "HHResult",
    "gaussian_density",
    "solve_hjb",
    "solve_fpk",
    "mean_control",
    "picard_solve",
    "feynman_kac_estimate",
    "frozen_control_drift",
    "hermite_hadamard_check",
    "utility_eval",
    "export_field",
]


# --------------------------------------------------------------------------
# grid, noise, and field containers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MFGGrid:
    """Uniform space-time grid on [0, t_max] x [x_min, x_max]."""

    t_max: float
    x_min: float
    x_max: float
    nt: int
    nx: int

    def __post_init__(self):
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise InvalidInputError("horizon t_max must be positive and finite")
        if not self.x_max > self.x_min:
            raise InvalidInputError("need x_max > x_min")
        if self.nt < 3 or self.nx < 3:
            raise InvalidInputError("need nt >= 3 and nx >= 3")

    @property
    def dt(self) -> float:
        return self.t_max / (self.nt - 1)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.nt)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)


#: spawn keys for the independent noise streams of one NoiseSpec seed
_TERM_KEYS = {"w1": 1, "w2": 2, "w3": 3, "w4": 4, "w5": 5, "w6": 6,
              "w7": 7, "w8": 8, "w_prime": 9}


@dataclass(frozen=True)
class NoiseSpec:
    """Amplitudes of the random-walk terms; amplitude 0 disables a term.

    Each term is modeled as a scaled Wiener increment N(0, w^2 dt) per step,
    drawn from its own deterministic substream of ``seed``:

    - ``w1`` state noise; enters both PDEs as diffusion (w1^2/2) d2/dx2,
    - ``w2``, ``w3`` additive forcing of the value equation,
    - ``w4`` additive forcing of the density equation,
    - ``w6`` path noise of the Feynman-Kac oracle,
    - ``w7`` path noise of the adversary control law,
    - ``w8``, ``w_prime`` reserved for the outer algorithm (residual softening).
    """

    w1: float = 0.0
    w2: float = 0.0
    w3: float = 0.0
    w4: float = 0.0
    w5: float = 0.0
    w6: float = 0.0
    w7: float = 0.0
    w8: float = 0.0
    w_prime: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in _TERM_KEYS:
            amp = getattr(self, name)
            if not (math.isfinite(amp) and amp >= 0):
                raise InvalidInputError(f"noise amplitude {name} must be >= 0")

    def stream(self, term: str) -> np.random.Generator:
        """Independent generator for one noise term, reproducible from seed."""
        seq = np.random.SeedSequence(self.seed, spawn_key=(_TERM_KEYS[term],))
        return np.random.default_rng(seq)

    def increments(self, term: str, count: int, dt: float) -> np.ndarray:
        """``count`` Wiener increments N(0, w^2 dt) of the named term."""
        amp = getattr(self, term)
        if amp == 0.0:
            return np.zeros(count)
        return self.stream(term).normal(0.0, amp * math.sqrt(dt), count)


@dataclass
class MFGField:
    """Value function u, density m, control theta, and mean control theta_bar
    on one grid.  ``solved``/``converged`` track what produced the arrays."""

    grid: MFGGrid
    u: np.ndarray
    m: np.ndarray
    theta: np.ndarray
    theta_bar: np.ndarray
    lambda_reg: float = 1.0
    theta_bounds: tuple[float, float] = (-10.0, 10.0)
    solved: bool = False
    converged: bool | None = None

    @classmethod
    def init(cls, grid: MFGGrid, lambda_reg: float = 1.0,
             theta_bounds: tuple[float, float] = (-10.0, 10.0),
             terminal: np.ndarray | None = None) -> "MFGField":
        """Fresh field with the terminal value row set (default 0)."""
        if not (lambda_reg > 0 and math.isfinite(lambda_reg)):
            raise InvalidInputError("lambda_reg must be positive")
        lo, hi = float(theta_bounds[0]), float(theta_bounds[1])
        if not lo <= hi:
            raise InvalidInputError("theta_bounds must satisfy lo <= hi")
        u = np.zeros((grid.nt, grid.nx))
        if terminal is not None:
            terminal = np.asarray(terminal, dtype=float)
            if terminal.shape != (grid.nx,):
                raise InvalidInputError("terminal condition must have length nx")
            u[-1] = terminal
        return cls(grid=grid, u=u, m=np.zeros_like(u), theta=np.zeros_like(u),
                   theta_bar=np.zeros(grid.nt), lambda_reg=lambda_reg,
                   theta_bounds=(lo, hi))


def gaussian_density(grid: MFGGrid, center: float, width: float) -> np.ndarray:
    """Discrete Gaussian bump normalized so sum(m) * dx = 1."""
    if width <= 0:
        raise InvalidInputError("width must be positive")
    m = np.exp(-0.5 * ((grid.xs - center) / width) ** 2)
    total = m.sum() * grid.dx
    if total == 0.0:
        raise InvalidInputError("density support does not intersect the grid")
    return m / total


# --------------------------------------------------------------------------
# spatial operators
# --------------------------------------------------------------------------

def _implicit_diffusion_step(rows: np.ndarray, r: float, conserve: bool) -> np.ndarray:
    """Solve (I - r * L) out = rows for one backward-Euler diffusion step.

    ``conserve=True`` uses the zero-flux Laplacian (mass-preserving, for the
    density); ``conserve=False`` zeroes the boundary rows (zero curvature,
    keeps affine value profiles exact).
    """
    nx = rows.shape[-1]
    ab = np.zeros((3, nx))
    ab[0, 1:] = -r          # superdiagonal
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :-1] = -r         # subdiagonal
    if conserve:
        ab[1, 0] = ab[1, -1] = 1.0 + r
    else:
        ab[1, 0] = ab[1, -1] = 1.0
        ab[0, 1] = 0.0
        ab[2, -2] = 0.0
    return solve_banded((1, 1), ab, rows.T, overwrite_ab=False).T


def _one_sided_slopes(u_row: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward difference quotients with one-sided edges."""
    db = np.empty_like(u_row)
    df = np.empty_like(u_row)
    db[1:] = (u_row[1:] - u_row[:-1]) / dx
    df[:-1] = (u_row[1:] - u_row[:-1]) / dx
    db[0] = df[0]
    df[-1] = db[-1]
    return db, df


def _control_row(u_row: np.ndarray, dx: float, lam: float,
                 bounds: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise minimizer of (lam/2) theta^2 - theta * Du with upwinded Du.

    The positive-control branch differences against the left neighbour, the
    negative branch against the right one; the cheaper branch wins, which
    keeps the scheme monotone under the advective CFL condition.
    Returns (theta_row, minimized_value_row).
    """
    lo, hi = bounds
    db, df = _one_sided_slopes(u_row, dx)
    best_q = np.full_like(u_row, np.inf)
    best_t = np.zeros_like(u_row)
    if hi >= 0.0:
        tp = np.clip(db / lam, max(lo, 0.0), hi)
        qp = 0.5 * lam * tp ** 2 - tp * db
        best_q, best_t = qp, tp
    if lo <= 0.0:
        tm = np.clip(df / lam, lo, min(hi, 0.0))
        qm = 0.5 * lam * tm ** 2 - tm * df
        take = qm < best_q
        best_t = np.where(take, tm, best_t)
        best_q = np.where(take, qm, best_q)
    return best_t, best_q


# --------------------------------------------------------------------------
# HJB and transport sweeps
# --------------------------------------------------------------------------

def solve_hjb(grid: MFGGrid, theta_bar: Sequence[float], noise: NoiseSpec,
              field: MFGField,
              running_cost: Callable[[np.ndarray, float], np.ndarray] | None = None,
              ) -> MFGField:
    """Backward sweep of the value equation for a frozen mean control.

    Solves d_t u + inf_theta { cost(x,t) + (lam/2) theta^2 - theta d_x u }
    + (w1^2/2) d2_x u + forcing = 0 from the terminal row of ``field.u``
    downward; the minimizer theta*(t,x) = clip(d_x u / lam, theta_bounds) is
    stored in the returned field.  ``running_cost`` defaults to
    x - theta_bar(t).

    Raises :class:`StabilityError` when the realized control violates the
    advective CFL condition dt * max|theta| / dx <= 1.
    """
    theta_bar = np.asarray(theta_bar, dtype=float)
    if theta_bar.shape != (grid.nt,):
        raise InvalidInputError("theta_bar must have length nt")
    lam = field.lambda_reg
    dt, dx = grid.dt, grid.dx
    nu = 0.5 * noise.w1 ** 2
    r = nu * dt / dx ** 2
    forcing = (noise.increments("w2", grid.nt - 1, dt)
               + noise.increments("w3", grid.nt - 1, dt))

    u = np.empty((grid.nt, grid.nx))
    theta = np.empty_like(u)
    u[-1] = field.u[-1]
    theta[-1], _ = _control_row(u[-1], dx, lam, field.theta_bounds)
    xs = grid.xs
    times = grid.times

    for n in range(grid.nt - 2, -1, -1):
        later = u[n + 1]
        theta_row, q_row = _control_row(later, dx, lam, field.theta_bounds)
        speed = np.abs(theta_row).max()
        if dt * speed / dx > 1.0 + 1e-12:
            raise StabilityError(
                f"advective CFL violated at t={times[n]:.6g}: "
                f"dt*|theta|/dx = {dt * speed / dx:.3g}",
                suggested_dt=0.9 * dx / speed,
            )
        if running_cost is None:
            cost = xs - theta_bar[n]
        else:
            cost = np.broadcast_to(running_cost(xs, times[n]), xs.shape)
        stage = later + dt * (cost + q_row) + forcing[n]
        u[n] = _implicit_diffusion_step(stage, r, conserve=False) if r > 0 else stage
        # report the feedback law of the row itself, not the step driver:
        # keeps theta(t_n, x) aligned with u(t_n, x)
        theta[n], _ = _control_row(u[n], dx, lam, field.theta_bounds)

    return replace(field, u=u, theta=theta, theta_bar=theta_bar.copy(),
                   solved=True)


def solve_fpk(grid: MFGGrid, theta: np.ndarray, m0: Sequence[float],
              noise: NoiseSpec,
              extra_drift: Sequence[float] | None = None) -> np.ndarray:
    """Forward upwind sweep of d_t m = d_x(theta m) + (w1^2/2) d2_x m.

    Zero-flux boundaries; the advective flux is finite-volume upwind, so the
    plain mass sum(m) * dx is conserved exactly (to rounding) in the
    noise-free case.  ``extra_drift`` is an optional per-time drift added to
    the state dynamics (used by the outer algorithm's adversary coupling);
    positive w4 adds per-step forcing and the density is clipped at 0.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (grid.nt, grid.nx):
        raise InvalidInputError("theta must be an nt x nx array")
    m_init = np.asarray(m0, dtype=float)
    if m_init.shape != (grid.nx,):
        raise InvalidInputError("m0 must have length nx")
    if np.any(m_init < 0):
        raise InvalidInputError("initial density must be nonnegative")
    if abs(m_init.sum() * grid.dx - 1.0) > 1e-3:
        raise InvalidInputError("initial density must integrate to 1")
    if extra_drift is not None:
        extra_drift = np.asarray(extra_drift, dtype=float)
        if extra_drift.shape != (grid.nt,):
            raise InvalidInputError("extra_drift must have length nt")

    dt, dx = grid.dt, grid.dx
    nu = 0.5 * noise.w1 ** 2
    r = nu * dt / dx ** 2
    forcing = noise.increments("w4", grid.nt - 1, dt)

    m = np.empty((grid.nt, grid.nx))
    m[0] = m_init
    for n in range(grid.nt - 1):
        row = m[n]
        # time-centered velocity: first-order sampling biases the mean by
        # O(dt) when the control varies in time; the midpoint is exact for
        # controls linear in t
        theta_eff = 0.5 * (theta[n] + theta[n + 1])
        if extra_drift is not None:
            theta_eff = theta_eff - 0.5 * (extra_drift[n] + extra_drift[n + 1])
        # transport velocity of mass is -theta_eff
        v_face = -0.5 * (theta_eff[:-1] + theta_eff[1:])
        speed = np.abs(v_face).max() if v_face.size else 0.0
        if dt * speed / dx > 1.0 + 1e-12:
            raise StabilityError(
                f"transport CFL violated at step {n}: dt*|v|/dx = "
                f"{dt * speed / dx:.3g}",
                suggested_dt=0.9 * dx / speed,
            )
        flux = np.where(v_face > 0.0, v_face * row[:-1], v_face * row[1:])
        dm = np.zeros_like(row)
        dm[:-1] -= flux / dx
        dm[1:] += flux / dx
        stage = row + dt * dm
        nxt = _implicit_diffusion_step(stage, r, conserve=True) if r > 0 else stage
        if forcing[n] != 0.0:
            nxt = np.maximum(nxt + forcing[n], 0.0)
        m[n + 1] = nxt
    return m


def mean_control(theta_row: Sequence[float], m_row: Sequence[float],
                 dx: float) -> float:
    """Trapezoidal average control: integral of theta(t,x) m(t,x) dx."""
    theta_row = np.asarray(theta_row, dtype=float)
    m_row = np.asarray(m_row, dtype=float)
    if theta_row.shape != m_row.shape:
        raise InvalidInputError("theta and m rows must have equal length")
    return float(trapezoid(theta_row * m_row, dx=dx))


@dataclass
class PicardResult:
    """Fixed-point solve outcome: final field plus the residual history."""

    field: MFGField
    residuals: np.ndarray
    converged: bool
    iterations: int


def picard_solve(grid: MFGGrid, m0: Sequence[float], *,
                 lambda_reg: float = 1.0,
                 theta_bounds: tuple[float, float] = (-10.0, 10.0),
                 terminal: np.ndarray | None = None,
                 noise: NoiseSpec | None = None,
                 damping: float = 1.0,
                 tol: float = 1e-6,
                 max_iter: int = 50,
                 theta_bar0: Sequence[float] | None = None,
                 extra_drift: Sequence[float] | None = None) -> PicardResult:
    """Damped fixed-point iteration on the mean control theta_bar(t).

    Each pass runs the backward value sweep, the forward density sweep, and
    the mean-control update; theta_bar moves by ``damping`` times the
    proposed change.  Stops when the sup-norm change drops below ``tol``.
    Reaching ``max_iter`` is reported (``converged=False``), not raised.
    """
    if not (0.0 < damping <= 1.0):
        raise InvalidInputError("damping must lie in (0, 1]")
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")
    noise = noise if noise is not None else NoiseSpec()

    field = MFGField.init(grid, lambda_reg=lambda_reg,
                          theta_bounds=theta_bounds, terminal=terminal)
    theta_bar = (np.zeros(grid.nt) if theta_bar0 is None
                 else np.asarray(theta_bar0, dtype=float).copy())
    residuals: list[float] = []
    converged = False
    m = np.zeros((grid.nt, grid.nx))
    for _ in range(max_iter):
        field = solve_hjb(grid, theta_bar, noise, field)
        m = solve_fpk(grid, field.theta, m0, noise, extra_drift=extra_drift)
        proposal = np.array([mean_control(field.theta[n], m[n], grid.dx)
                             for n in range(grid.nt)])
        updated = theta_bar + damping * (proposal - theta_bar)
        res = float(np.abs(updated - theta_bar).max())
        theta_bar = updated
        residuals.append(res)
        if res < tol:
            converged = True
            break
    field = replace(field, m=m, theta_bar=theta_bar, converged=converged)
    return PicardResult(field=field, residuals=np.asarray(residuals),
                        converged=converged, iterations=len(residuals))


# --------------------------------------------------------------------------
# verification oracles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeynmanKacSpec:
    """Ingredients of the stochastic representation of a linear value PDE.

    All callables take (x_array, t) and broadcast over x.  ``sigma`` is the
    path-noise amplitude (the W6 term).
    """

    discount: Callable[[np.ndarray, float], np.ndarray]
    running: Callable[[np.ndarray, float], np.ndarray]
    terminal: Callable[[np.ndarray], np.ndarray]
    drift: Callable[[np.ndarray, float], np.ndarray]
    paths: int
    seed: int = 0
    sigma: float = 0.0


@dataclass(frozen=True)
class FKEstimate:
    value: float
    stderr: float
    paths: int


def feynman_kac_estimate(spec: FeynmanKacSpec, grid: MFGGrid, x0: float,
                         t0: float) -> FKEstimate:
    """Monte Carlo value estimate at (x0, t0) over Euler-Maruyama paths.

    Averages int_t0^T exp(-int Upsilon) f dt' + exp(-int Upsilon) phi(x_T)
    along dx = mu dt + sigma dW, stepping with the grid's dt (the final
    step is shortened to land on T exactly).
    """
    if spec.paths < 1:
        raise InvalidInputError("paths must be >= 1")
    if not (0.0 <= t0 <= grid.t_max + 1e-12):
        raise InvalidInputError("t0 must lie in [0, t_max]")
    rng = np.random.default_rng(spec.seed)
    x = np.full(spec.paths, float(x0))
    discount_acc = np.zeros(spec.paths)
    value = np.zeros(spec.paths)
    t = float(t0)
    while t < grid.t_max - 1e-12:
        h = min(grid.dt, grid.t_max - t)
        weight = np.exp(-discount_acc)
        value += weight * np.broadcast_to(spec.running(x, t), x.shape) * h
        discount_acc += np.broadcast_to(spec.discount(x, t), x.shape) * h
        step = np.broadcast_to(spec.drift(x, t), x.shape) * h
        if spec.sigma > 0.0:
            step = step + spec.sigma * math.sqrt(h) * rng.standard_normal(spec.paths)
        x = x + step
        t += h
    value += np.exp(-discount_acc) * np.broadcast_to(spec.terminal(x), x.shape)
    stderr = float(value.std(ddof=1) / math.sqrt(spec.paths)) if spec.paths > 1 else 0.0
    return FKEstimate(value=float(value.mean()), stderr=stderr, paths=spec.paths)


def frozen_control_drift(field: MFGField) -> Callable[[np.ndarray, float], np.ndarray]:
    """Drift callable mu(x,t) = -theta(t,x) for Feynman-Kac cross-checks.

    Bilinear interpolation in (t, x); x is clamped to the grid (consistent
    with the one-sided boundary treatment of the PDE sweeps).
    """
    grid = field.grid
    theta = field.theta

    def mu(x: np.ndarray, t: float) -> np.ndarray:
        ti = min(max(t, 0.0), grid.t_max) / grid.dt
        i0 = min(int(ti), grid.nt - 2)
        wt = ti - i0
        xc = np.clip(x, grid.x_min, grid.x_max)
        xi = (xc - grid.x_min) / grid.dx
        j0 = np.minimum(xi.astype(int), grid.nx - 2)
        wx = xi - j0
        row0 = theta[i0, j0] * (1 - wx) + theta[i0, j0 + 1] * wx
        row1 = theta[i0 + 1, j0] * (1 - wx) + theta[i0 + 1, j0 + 1] * wx
        return -(row0 * (1 - wt) + row1 * wt)

    return mu


@dataclass(frozen=True)
class HHResult:
    """Outcome of the midpoint-mean-endpoint convexity sandwich."""

    passed: bool
    lower_margin: float   # mean - midpoint value; >= 0 for convex f
    upper_margin: float   # endpoint average - mean; >= 0 for convex f


def hermite_hadamard_check(values: Sequence[float], tol: float = 1e-9) -> HHResult:
    """Check f(midpoint) <= interval mean <= endpoint average on samples.

    ``values`` are f sampled uniformly over the interval; the mean is the
    trapezoidal average.  For convex f both margins are >= 0 (equality for
    affine f); a concave f drives them negative.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 3:
        raise InvalidInputError("need at least 3 samples")
    n = v.size
    if n % 2 == 1:
        midpoint = v[n // 2]
    else:
        midpoint = 0.5 * (v[n // 2 - 1] + v[n // 2])
    mean = float(trapezoid(v) / (n - 1))
    endpoint = 0.5 * (v[0] + v[-1])
    lower = mean - midpoint
    upper = endpoint - mean
    return HHResult(passed=bool(lower >= -tol and upper >= -tol),
                    lower_margin=float(lower), upper_margin=float(upper))


def utility_eval(field: MFGField, trajectory: Sequence[float]) -> float:
    """Trapezoidal utility int_t^T x(v) dv along a sampled state path.

    ``trajectory`` holds states at the trailing grid times, ending at T; a
    length-k path therefore starts at t = T - (k-1) dt.  A single sample
    means the empty integral (value 0).
    """
    path = np.asarray(trajectory, dtype=float).ravel()
    grid = field.grid
    if not 1 <= path.size <= grid.nt:
        raise InvalidInputError("trajectory must hold between 1 and nt samples")
    if np.any(path < grid.x_min - 1e-12) or np.any(path > grid.x_max + 1e-12):
        raise ExtrapolationError("trajectory leaves the grid state bounds")
    if path.size == 1:
        return 0.0
    return float(trapezoid(path, dx=grid.dt))


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def export_field(field: MFGField, out_dir: str | Path,
                 residuals: Sequence[float] | None = None) -> list[Path]:
    """Write u/m/theta CSV grids, theta_bar.csv, and a JSON manifest.

    Output is deterministic for identical inputs (no timestamps); returns
    the list of files written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, arr in (("u", field.u), ("m", field.m), ("theta", field.theta)):
        path = out / f"{name}.csv"
        np.savetxt(path, arr, delimiter=",", fmt="%.17g")
        written.append(path)
    tb_path = out / "theta_bar.csv"
    with open(tb_path, "w") as fh:
        fh.write("t,theta_bar\n")
        for t, tb in zip(field.grid.times, field.theta_bar):
            fh.write(f"{float(t)!r},{float(tb)!r}\n")
    written.append(tb_path)
    manifest = {
        "t_max": field.grid.t_max,
        "x_min": field.grid.x_min,
        "x_max": field.grid.x_max,
        "nt": field.grid.nt,
        "nx": field.grid.nx,
        "dt": field.grid.dt,
        "dx": field.grid.dx,
        "lambda_reg": field.lambda_reg,
        "theta_bounds": list(field.theta_bounds),
        "solved": field.solved,
        "converged": field.converged,
        "residuals": [float(r) for r in residuals] if residuals is not None else None,
    }
    man_path = out / "manifest.json"
    with open(man_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(man_path)
    return written
