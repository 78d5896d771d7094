"""Self-exciting adversary activity and its extinction calculus.

Eve's interception attempts form a multivariate Hawkes process with
exponential triggering kernels.  The cluster representation maps each
baseline (immigrant) event to a Galton-Watson tree with Poisson(m)
offspring, m the branching ratio, so cluster death probabilities reduce to
the smallest root of q = exp(m (q - 1)).  The augmented control law feeds
either the compensation process or the conditional extinction probability
back into the gain dynamics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidInputError, StabilityError
from .mfg import MFGGrid, NoiseSpec

__all__ = [
    "HawkesModel",
    "HawkesState",
    "AdversaryState",
    "LatticeRegion",
    "EveTrajectory",
    "simulate_hawkes",
    "intensity_eval",
    "intensity_path",
    "compensator",
    "time_rescaled_gaps",
    "extinction_probability",
    "eve_control_law",
    "secrecy_outage",
    "volume_to_noise_ratio",
    "adversary_report",
    "save_events_csv",
    "load_events_csv",
]


# --------------------------------------------------------------------------
# model and state
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HawkesModel:
    """Baselines gamma_i and pairwise kernels alpha_ij * exp(-beta_ij t)."""

    dims: int
    gamma: np.ndarray
    trig_alpha: np.ndarray
    trig_beta: np.ndarray
    horizon: float

    def __post_init__(self):
        n = self.dims
        if n < 1:
            raise InvalidInputError("dims must be >= 1")
        gamma = np.broadcast_to(np.asarray(self.gamma, dtype=float), (n,)).copy()
        alpha = np.broadcast_to(np.asarray(self.trig_alpha, dtype=float), (n, n)).copy()
        beta = np.broadcast_to(np.asarray(self.trig_beta, dtype=float), (n, n)).copy()
        if np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
            raise InvalidInputError("baselines gamma must be >= 0 and finite")
        if np.any(alpha < 0) or not np.all(np.isfinite(alpha)):
            raise InvalidInputError("trig_alpha must be >= 0 and finite")
        if not np.all(np.isfinite(beta)) or np.any(beta < 0):
            raise InvalidInputError("trig_beta must be >= 0 and finite")
        if np.any((alpha > 0) & (beta <= 0)):
            raise InvalidInputError("active kernels (alpha > 0) need beta > 0")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise InvalidInputError("horizon must be positive and finite")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "trig_alpha", alpha)
        object.__setattr__(self, "trig_beta", beta)

    @classmethod
    def univariate(cls, gamma: float, alpha: float, beta: float,
                   horizon: float) -> "HawkesModel":
        return cls(dims=1, gamma=np.array([gamma]),
                   trig_alpha=np.array([[alpha]]),
                   trig_beta=np.array([[beta]]),
                   horizon=horizon)

    @property
    def branching_matrix(self) -> np.ndarray:
        """Mean offspring counts: integral of each kernel, alpha/beta."""
        out = np.zeros_like(self.trig_alpha)
        mask = self.trig_alpha > 0
        out[mask] = self.trig_alpha[mask] / self.trig_beta[mask]
        return out

    @property
    def branching_ratio(self) -> float:
        """Spectral radius of the branching matrix."""
        return float(np.abs(np.linalg.eigvals(self.branching_matrix)).max())


@dataclass
class HawkesState:
    """Realized event streams: per-dimension sorted times, immigrant flags
    (cluster roots), and left-limit intensities at the events."""

    events: list[np.ndarray]
    roots: list[np.ndarray]
    event_intensities: list[np.ndarray]
    horizon: float

    @property
    def total_events(self) -> int:
        return sum(len(ev) for ev in self.events)

    def count_before(self, dim: int, t: float) -> int:
        return int(np.searchsorted(self.events[dim], t, side="right"))

    def root_times(self) -> np.ndarray:
        """All immigrant event times, pooled over dimensions, sorted."""
        pools = [ev[r] for ev, r in zip(self.events, self.roots)]
        merged = np.concatenate(pools) if pools else np.empty(0)
        return np.sort(merged)


def save_events_csv(state: HawkesState, path: str | Path) -> None:
    """Write the pooled stream as (dimension, timestamp) rows in time order."""
    rows = []
    for dim, ev in enumerate(state.events):
        rows.extend((dim, t) for t in ev)
    rows.sort(key=lambda r: (r[1], r[0]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dimension", "timestamp"])
        for dim, t in rows:
            writer.writerow([dim, repr(float(t))])


def load_events_csv(path: str | Path, dims: int, horizon: float) -> HawkesState:
    """Rebuild a state from a (dimension, timestamp) CSV; flags and
    intensities are not stored in the file, so roots default to all-True."""
    per_dim: list[list[float]] = [[] for _ in range(dims)]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["dimension", "timestamp"]:
            raise InvalidInputError(f"bad event header in {path}: {header!r}")
        for row in reader:
            if not row:
                continue
            dim = int(row[0])
            if not 0 <= dim < dims:
                raise InvalidInputError(f"dimension {dim} out of range in {path}")
            per_dim[dim].append(float(row[1]))
    events = [np.sort(np.asarray(ts)) for ts in per_dim]
    return HawkesState(events=events,
                       roots=[np.ones(len(ev), dtype=bool) for ev in events],
                       event_intensities=[np.full(len(ev), np.nan) for ev in events],
                       horizon=horizon)


# --------------------------------------------------------------------------
# simulation and exact intensity calculus
# --------------------------------------------------------------------------

def simulate_hawkes(model: HawkesModel, seed: int,
                    allow_supercritical: bool = False) -> HawkesState:
    """Ogata thinning with the exact exponential-kernel decay recursion.

    Between events every intensity decays, so the post-event total is a
    valid dominating rate.  Non-stationary models (branching ratio >= 1)
    are refused unless ``allow_supercritical`` is set.
    """
    ratio = model.branching_ratio
    if ratio >= 1.0 and not allow_supercritical:
        raise StabilityError(
            f"branching ratio {ratio:.3g} >= 1: process is non-stationary "
            "(pass allow_supercritical=True to simulate anyway)"
        )
    rng = np.random.default_rng(seed)
    n = model.dims
    gamma = model.gamma
    alpha = model.trig_alpha
    beta = model.trig_beta
    # excitation[i, j]: summed kernel contributions of past dim-j events to i
    excitation = np.zeros((n, n))
    events: list[list[float]] = [[] for _ in range(n)]
    roots: list[list[bool]] = [[] for _ in range(n)]
    intens: list[list[float]] = [[] for _ in range(n)]
    t = 0.0
    while True:
        # excitation always holds the state at the current clock t
        lam = gamma + excitation.sum(axis=1)
        bound = lam.sum()
        if bound <= 0.0:
            break
        step = rng.exponential(1.0 / bound)
        if t + step > model.horizon:
            break
        t = t + step
        excitation = excitation * np.exp(-beta * step)
        lam = gamma + excitation.sum(axis=1)
        mark = rng.uniform(0.0, bound)
        if mark <= lam.sum():
            dim = int(np.searchsorted(np.cumsum(lam), mark))
            dim = min(dim, n - 1)
            is_root = bool(rng.uniform() < gamma[dim] / lam[dim]) if lam[dim] > 0 else True
            events[dim].append(t)
            roots[dim].append(is_root)
            intens[dim].append(float(lam[dim]))
            excitation[:, dim] += alpha[:, dim]
    return HawkesState(
        events=[np.asarray(ev) for ev in events],
        roots=[np.asarray(r, dtype=bool) for r in roots],
        event_intensities=[np.asarray(v) for v in intens],
        horizon=model.horizon,
    )


def intensity_eval(model: HawkesModel, state: HawkesState, t: float,
                   method: str = "recursive") -> np.ndarray:
    """Intensity vector at time t from the history strictly before t.

    ``method="direct"`` sums every kernel term; ``"recursive"`` marches the
    decay recursion through the ordered events.  Both are exact for
    exponential kernels and agree to rounding.
    """
    if not 0.0 <= t <= state.horizon:
        raise InvalidInputError(f"t={t} outside [0, {state.horizon}]")
    if method == "direct":
        lam = model.gamma.copy()
        for j, ev in enumerate(state.events):
            past = ev[ev < t]
            if past.size:
                lam += np.sum(
                    model.trig_alpha[:, j][:, None]
                    * np.exp(-model.trig_beta[:, j][:, None] * (t - past[None, :])),
                    axis=1,
                )
        return lam
    if method != "recursive":
        raise InvalidInputError("method must be 'recursive' or 'direct'")
    times, dims_idx = _merged_stream(state)
    excitation = np.zeros((model.dims, model.dims))
    prev = 0.0
    for tau, j in zip(times, dims_idx):
        if tau >= t:
            break
        excitation *= np.exp(-model.trig_beta * (tau - prev))
        excitation[:, j] += model.trig_alpha[:, j]
        prev = tau
    excitation *= np.exp(-model.trig_beta * (t - prev))
    return model.gamma + excitation.sum(axis=1)


def _merged_stream(state: HawkesState) -> tuple[np.ndarray, np.ndarray]:
    times = np.concatenate(state.events) if state.events else np.empty(0)
    dims_idx = np.concatenate([np.full(len(ev), j, dtype=int)
                               for j, ev in enumerate(state.events)]) \
        if state.events else np.empty(0, dtype=int)
    order = np.argsort(times, kind="stable")
    return times[order], dims_idx[order]


def intensity_path(model: HawkesModel, state: HawkesState,
                   times: Sequence[float]) -> np.ndarray:
    """Intensity vectors sampled at sorted query times (len(times) x dims)."""
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, model.dims))
    ev_times, ev_dims = _merged_stream(state)
    excitation = np.zeros((model.dims, model.dims))
    prev = 0.0
    k = 0
    for qi, t in enumerate(times):
        while k < ev_times.size and ev_times[k] < t:
            tau, j = ev_times[k], ev_dims[k]
            excitation *= np.exp(-model.trig_beta * (tau - prev))
            excitation[:, j] += model.trig_alpha[:, j]
            prev = tau
            k += 1
        decayed = excitation * np.exp(-model.trig_beta * (t - prev))
        out[qi] = model.gamma + decayed.sum(axis=1)
    return out


def compensator(model: HawkesModel, state: HawkesState, t: float) -> np.ndarray:
    """Closed-form compensation process: int_0^t intensity dv - N(t).

    For exponential kernels each event contributes (alpha/beta) *
    (1 - exp(-beta (t - tau))) to the integrated intensity.
    """
    if not 0.0 <= t <= state.horizon:
        raise InvalidInputError(f"t={t} outside [0, {state.horizon}]")
    integral = model.gamma * t
    counts = np.zeros(model.dims)
    ratio = model.branching_matrix
    for j, ev in enumerate(state.events):
        past = ev[ev < t]
        counts[j] = past.size + np.count_nonzero(ev == t)
        if past.size:
            integral += np.sum(
                ratio[:, j][:, None]
                * (1.0 - np.exp(-model.trig_beta[:, j][:, None] * (t - past[None, :]))),
                axis=1,
            )
    return integral - counts


def time_rescaled_gaps(model: HawkesModel, state: HawkesState,
                       dim: int = 0) -> np.ndarray:
    """Inter-event gaps of the time-rescaled stream of one dimension.

    Maps each event time through the integrated intensity; under the model
    the gaps are i.i.d. Exp(1) (time-rescaling theorem).
    """
    if not 0 <= dim < model.dims:
        raise InvalidInputError("dim out of range")
    targets = state.events[dim]
    if targets.size == 0:
        return np.empty(0)
    ev_times, ev_dims = _merged_stream(state)
    beta_row = model.trig_beta[dim]        # kernels feeding this dimension
    alpha_row = model.trig_alpha[dim]
    ratio_row = np.where(alpha_row > 0, alpha_row / np.where(beta_row > 0, beta_row, 1.0), 0.0)
    excitation = np.zeros(model.dims)
    integral = 0.0
    prev = 0.0
    out = np.empty(targets.size)
    k = 0
    for i, t in enumerate(targets):
        while k < ev_times.size and ev_times[k] < t:
            tau, j = ev_times[k], ev_dims[k]
            decay = np.exp(-beta_row * (tau - prev))
            integral += model.gamma[dim] * (tau - prev) \
                + np.sum(np.where(beta_row > 0,
                                  excitation / np.where(beta_row > 0, beta_row, 1.0)
                                  * (1.0 - decay), 0.0))
            excitation = excitation * decay
            excitation[j] += alpha_row[j]
            prev = tau
            k += 1
        decay = np.exp(-beta_row * (t - prev))
        integral += model.gamma[dim] * (t - prev) \
            + np.sum(np.where(beta_row > 0,
                              excitation / np.where(beta_row > 0, beta_row, 1.0)
                              * (1.0 - decay), 0.0))
        excitation = excitation * decay
        prev = t
        out[i] = integral
    return np.diff(np.concatenate([[0.0], out]))


# --------------------------------------------------------------------------
# extinction calculus
# --------------------------------------------------------------------------

def extinction_probability(offspring_mean: float, tol: float = 1e-12,
                           max_iter: int = 10000) -> float:
    """Smallest fixed point of q = exp(m (q - 1)) (Poisson offspring).

    Subcritical and critical branching (m <= 1) die out surely, q = 1.
    Above criticality the fixed-point iteration from q = 0 is run with
    Steffensen acceleration until the residual drops below ``tol``.
    """
    m = float(offspring_mean)
    if not (m >= 0 and math.isfinite(m)):
        raise InvalidInputError("offspring mean must be >= 0 and finite")
    if m <= 1.0:
        return 1.0
    q = 0.0
    for _ in range(max_iter):
        f1 = math.exp(m * (q - 1.0))
        if abs(f1 - q) < tol:
            return q
        f2 = math.exp(m * (f1 - 1.0))
        denom = f2 - 2.0 * f1 + q
        if denom != 0.0:
            accel = q - (f1 - q) ** 2 / denom
            q = accel if 0.0 <= accel < 1.0 else f2
        else:
            q = f2
    raise StabilityError(f"extinction fixed point did not reach {tol} "
                         f"in {max_iter} iterations (m={m})")


@dataclass
class LatticeRegion:
    """Hyperrectangular decision cell with a point-process noise variance."""

    omega_sides: tuple[float, ...]
    n_dim: int | None = None
    cte: float = 2.0
    var_pp: float = 1.0
    err_prob: float = 0.0

    def __post_init__(self):
        sides = tuple(float(s) for s in self.omega_sides)
        if len(sides) == 0:
            raise InvalidInputError("region needs at least one side")
        if any(not math.isfinite(s) or s <= 0 for s in sides):
            raise InvalidInputError("region sides must be positive and finite")
        if self.n_dim is None:
            self.n_dim = len(sides)
        if self.n_dim < 1:
            raise InvalidInputError("n_dim must be >= 1")
        if not (self.var_pp > 0 and math.isfinite(self.var_pp)):
            raise InvalidInputError("var_pp must be positive")
        if not 0.0 <= self.err_prob <= 1.0:
            raise InvalidInputError("err_prob must lie in [0, 1]")
        self.omega_sides = sides

    @property
    def volume(self) -> float:
        return float(np.prod(self.omega_sides))


def volume_to_noise_ratio(region: LatticeRegion) -> float:
    """rho = |Omega|^(cte / n) / var_pp."""
    return region.volume ** (region.cte / region.n_dim) / region.var_pp


@dataclass
class AdversaryState:
    """Eve's branching summary plus optional realized activity.

    ``extinction_prob`` is pinned to 1 whenever the offspring mean is
    subcritical or critical.
    """

    offspring_mean: float
    extinction_prob: float
    r_conv: float = 1e-3
    region: LatticeRegion | None = None
    theta_eve: np.ndarray | None = None
    hawkes_model: HawkesModel | None = None
    hawkes_state: HawkesState | None = None

    def __post_init__(self):
        if not (self.offspring_mean >= 0 and math.isfinite(self.offspring_mean)):
            raise InvalidInputError("offspring_mean must be >= 0")
        if not 0.0 <= self.extinction_prob <= 1.0:
            raise InvalidInputError("extinction_prob must lie in [0, 1]")
        if self.offspring_mean <= 1.0 and self.extinction_prob != 1.0:
            raise InvalidInputError("q must be 1 for offspring mean <= 1")
        if self.r_conv <= 0:
            raise InvalidInputError("r_conv must be positive")

    @classmethod
    def from_offspring_mean(cls, offspring_mean: float, r_conv: float = 1e-3,
                            region: LatticeRegion | None = None,
                            hawkes_model: HawkesModel | None = None,
                            hawkes_state: HawkesState | None = None,
                            ) -> "AdversaryState":
        return cls(offspring_mean=offspring_mean,
                   extinction_prob=extinction_probability(offspring_mean),
                   r_conv=r_conv, region=region, hawkes_model=hawkes_model,
                   hawkes_state=hawkes_state)


def secrecy_outage(adversary: AdversaryState,
                   outage_map: Callable[[float], float] | None = None) -> float:
    """Probability that Eve's cluster process survives: 1 - q by default.

    ``outage_map`` may replace the default survival map; the result is
    validated to stay a probability.
    """
    q = adversary.extinction_prob
    out = (1.0 - q) if outage_map is None else float(outage_map(q))
    if not 0.0 <= out <= 1.0:
        raise InvalidInputError("outage map must return a probability")
    return out


@dataclass(frozen=True)
class EveTrajectory:
    """Integrated gain path under the augmented control law."""

    times: np.ndarray
    states: np.ndarray
    drift: np.ndarray        # per grid time; what augments the base law
    theta_eve: np.ndarray    # above-baseline intensity, per grid time


def eve_control_law(grid: MFGGrid, theta: np.ndarray,
                    adversary: AdversaryState, noise: NoiseSpec,
                    mode: str = "extinction", x0: float = 0.0) -> EveTrajectory:
    """Euler-Maruyama path of d x = -theta(v, x) dv + drift(v) dv + W7.

    ``mode="compensated"`` uses the summed compensation process of the
    attached Hawkes realization as drift; ``mode="extinction"`` uses the
    conditional extinction probability q^A(v), A(v) the number of cluster
    roots born by v.  Both modes need ``adversary.hawkes_model`` and
    ``adversary.hawkes_state``.
    """
    if mode not in ("compensated", "extinction"):
        raise ConfigurationError(f"unknown control-law mode {mode!r}")
    model, hstate = adversary.hawkes_model, adversary.hawkes_state
    if model is None or hstate is None:
        raise ConfigurationError(f"{mode} mode needs an attached Hawkes "
                                 "model and simulated state")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (grid.nt, grid.nx):
        raise InvalidInputError("theta must be an nt x nx array")

    times = grid.times
    if mode == "compensated":
        drift = np.array([float(np.sum(compensator(model, hstate, min(t, hstate.horizon))))
                          for t in times])
    else:
        roots = hstate.root_times()
        alive = np.searchsorted(roots, times, side="right")
        drift = adversary.extinction_prob ** alive.astype(float)

    lam_path = intensity_path(model, hstate, np.minimum(times, hstate.horizon))
    theta_eve = np.maximum(lam_path.sum(axis=1) - model.gamma.sum(), 0.0)

    dt = grid.dt
    dw = noise.increments("w7", grid.nt - 1, dt)
    states = np.empty(grid.nt)
    states[0] = x0
    xs = grid.xs
    for n in range(grid.nt - 1):
        xc = min(max(states[n], grid.x_min), grid.x_max)
        ctrl = float(np.interp(xc, xs, theta[n]))
        states[n + 1] = states[n] + dt * (-ctrl + drift[n]) + dw[n]
    return EveTrajectory(times=times, states=states, drift=drift,
                         theta_eve=theta_eve)


def adversary_report(adversary: AdversaryState, mode: str | None = None) -> dict:
    """JSON-ready summary {m, q, secrecy_outage, mode} plus flags."""
    report = {
        "m": adversary.offspring_mean,
        "q": adversary.extinction_prob,
        "secrecy_outage": secrecy_outage(adversary),
        "mode": mode,
        "supercritical": adversary.offspring_mean > 1.0,
    }
    if adversary.region is not None:
        report["volume_to_noise_ratio"] = volume_to_noise_ratio(adversary.region)
        report["err_prob"] = adversary.region.err_prob
    if adversary.offspring_mean > 1.0:
        report["note"] = ("supercritical branching: Eve's activity survives "
                          "with probability 1 - q > 0")
    return report
