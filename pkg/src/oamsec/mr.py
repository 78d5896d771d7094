"""Instrument-based estimation of the control gain theta.

The data model is the chain G - X - Y - V: instruments G act on the exposure
X, X drives the outcome Y, and a confounder V feeds both.  The gain theta
(the X -> Y effect) is recovered from per-instrument univariate regression
summaries via inverse-variance weighting, optionally with an intercept to
absorb directional pleiotropy.  Binned mutual-information diagnostics check
the three instrument conditions (independence, exclusion, relevance).

All sampling is driven by ``numpy.random.default_rng`` seeds; every function
here is pure and safe to call from parallel replications.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    InvalidInputError,
    NoInstrumentError,
    SingularityError,
    UnderdeterminedError,
)

__all__ = [
    "DesignParams",
    "StructuralModel",
    "SampleBatch",
    "SummaryStats",
    "MarkovDiagnostics",
    "sinr_quality",
    "generate_samples",
    "summary_stats",
    "estimate_theta",
    "estimate_theta_intercept",
    "conditional_mi",
    "validate_markov_conditions",
]


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignParams:
    """Physical-layer design parameters of one transmit configuration.

    ``ell`` is the mode index, ``L`` the minimum antenna count; ``psi0`` is
    the power threshold, ``psi1`` the antenna-pair count, ``psi2`` angular
    positions, ``psi3`` the user radius, ``psi4`` rotation/phase-shift
    angles and ``psi5`` the channel coefficient magnitude.
    """

    ell: int
    L: int
    psi0: float
    psi1: int = 1
    psi2: tuple[float, ...] = ()
    psi3: float = 1.0
    psi4: tuple[float, ...] = ()
    psi5: float = 1.0

    def validate(self) -> None:
        """Enforce the design invariants (mode inside the mode set, etc.)."""
        if not (0 <= self.ell <= self.L - 1):
            raise InvalidInputError(
                f"mode index {self.ell} outside [0, {self.L - 1}]"
            )
        if self.psi0 < 0:
            raise InvalidInputError("power threshold psi0 must be >= 0")
        if self.psi1 < 1:
            raise InvalidInputError("antenna-pair count psi1 must be >= 1")
        if self.psi3 <= 0:
            raise InvalidInputError("user radius psi3 must be > 0")


#: unit-variance error families accepted by :class:`StructuralModel`
_UNIT_ERRORS = ("normal", "laplace", "uniform")


@dataclass(frozen=True)
class StructuralModel:
    """Coefficients of the linear structural chain G - X - Y - V.

    ``var_x`` / ``var_y`` scale the unit-variance error draws named by
    ``err_x`` / ``err_y``; zero is allowed so noiseless oracle runs can use
    the same generator.
    """

    p: int
    beta_x0: float = 0.0
    beta_x: tuple[float, ...] = ()
    gamma_x: float = 0.0
    theta0: float = 0.0
    theta: float = 1.0
    alpha: tuple[float, ...] = ()
    gamma_y: float = 0.0
    var_x: float = 1.0
    var_y: float = 1.0
    err_x: str = "normal"
    err_y: str = "normal"

    def __post_init__(self):
        if self.p < 1:
            raise InvalidInputError("instrument count p must be >= 1")
        object.__setattr__(self, "beta_x", _as_coeffs(self.beta_x, self.p, "beta_x"))
        object.__setattr__(self, "alpha", _as_coeffs(self.alpha or (0.0,) * self.p,
                                                     self.p, "alpha"))
        if self.var_x < 0 or self.var_y < 0:
            raise InvalidInputError("error variances must be >= 0")
        for name in (self.err_x, self.err_y):
            if name not in _UNIT_ERRORS:
                raise InvalidInputError(
                    f"unknown error family {name!r}; pick one of {_UNIT_ERRORS}"
                )

    def validate(self) -> None:
        """Enforce the identifiability invariants (positive noise, relevance)."""
        if self.var_x == 0 or self.var_y == 0:
            raise InvalidInputError("var_x and var_y must be > 0 for a full model")
        if not any(b != 0.0 for b in self.beta_x):
            raise InvalidInputError("beta_x must not be all zero (relevance)")


def _as_coeffs(values: Sequence[float] | float, p: int, name: str) -> tuple[float, ...]:
    if np.isscalar(values):
        values = (float(values),) * p
    out = tuple(float(v) for v in values)
    if len(out) != p:
        raise InvalidInputError(f"{name} must have length p={p}, got {len(out)}")
    if not all(math.isfinite(v) for v in out):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return out


@dataclass
class SampleBatch:
    """One synthetic dataset: instruments ``g`` (n x p), exposure ``x``,
    outcome ``y`` and confounder ``v``."""

    g: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.g = np.atleast_2d(np.asarray(self.g, dtype=float))
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.v = np.asarray(self.v, dtype=float).ravel()
        n = self.g.shape[0]
        if not (self.x.size == self.y.size == self.v.size == n):
            raise InvalidInputError("g, x, y, v must share the same sample count")
        for name, arr in (("g", self.g), ("x", self.x), ("y", self.y), ("v", self.v)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"batch column {name} has non-finite entries")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def p(self) -> int:
        return self.g.shape[1]

    def save_csv(self, path: str | Path) -> None:
        """Write the batch with header ``g_1..g_p,x,y,v``."""
        header = [f"g_{j + 1}" for j in range(self.p)] + ["x", "y", "v"]
        data = np.column_stack([self.g, self.x, self.y, self.v])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in data:
                writer.writerow([repr(float(val)) for val in row])

    @classmethod
    def load_csv(cls, path: str | Path) -> "SampleBatch":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise InvalidInputError(f"empty sample file: {path}")
            expected_tail = ["x", "y", "v"]
            if header[-3:] != expected_tail or not header[0].startswith("g_"):
                raise InvalidInputError(
                    f"bad sample header {header!r}; expected g_1..g_p,x,y,v"
                )
            p = len(header) - 3
            rows = [[float(cell) for cell in row] for row in reader if row]
        data = np.asarray(rows, dtype=float)
        if data.size == 0:
            raise InvalidInputError(f"no sample rows in {path}")
        return cls(g=data[:, :p], x=data[:, p], y=data[:, p + 1], v=data[:, p + 2])


@dataclass(frozen=True)
class SummaryStats:
    """Per-instrument regression slopes and standard errors."""

    beta_hat_x: np.ndarray
    beta_hat_y: np.ndarray
    se_x: np.ndarray
    se_y: np.ndarray

    def __post_init__(self):
        for name in ("beta_hat_x", "beta_hat_y", "se_x", "se_y"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float).ravel())
        p = self.beta_hat_x.size
        if not (self.beta_hat_y.size == self.se_x.size == self.se_y.size == p):
            raise InvalidInputError("summary vectors must share length p")
        if np.any(self.se_x < 0) or np.any(self.se_y < 0):
            raise InvalidInputError("standard errors must be >= 0")

    @property
    def p(self) -> int:
        return self.beta_hat_x.size


# --------------------------------------------------------------------------
# SINR stub
# --------------------------------------------------------------------------

def default_mode_gain(ell: float, L: float) -> float:
    """Monotone placeholder gain exp(-ell^2 / (2 L^2)) for mode ``ell``."""
    return math.exp(-(ell ** 2) / (2.0 * L ** 2))


def sinr_quality(params: DesignParams, gain=None, crosstalk: float = 0.0) -> float:
    """Decoding quality psi0 * psi5^2 * gain(ell) / (1 + crosstalk).

    ``gain`` defaults to :func:`default_mode_gain`; both the gain and the
    crosstalk level are pluggable because the true link function is
    configuration-specific.
    """
    for name in ("psi0", "psi3", "psi5"):
        if not math.isfinite(getattr(params, name)):
            raise InvalidInputError(f"non-finite design parameter {name}")
    if not math.isfinite(crosstalk) or crosstalk < 0:
        raise InvalidInputError("crosstalk must be finite and >= 0")
    if params.psi0 < 0:
        raise InvalidInputError("power threshold psi0 must be >= 0")
    g = default_mode_gain(params.ell, params.L) if gain is None else gain(params.ell)
    return params.psi0 * params.psi5 ** 2 * g / (1.0 + crosstalk)


# --------------------------------------------------------------------------
# sampling and summary statistics
# --------------------------------------------------------------------------

def _unit_noise(rng: np.random.Generator, family: str, n: int) -> np.ndarray:
    # each family is scaled so Var = 1
    if family == "normal":
        return rng.standard_normal(n)
    if family == "laplace":
        return rng.laplace(0.0, 1.0 / math.sqrt(2.0), n)
    if family == "uniform":
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), n)
    raise InvalidInputError(f"unknown error family {family!r}")


def generate_samples(model: StructuralModel, n: int, seed: int) -> SampleBatch:
    """Draw ``n`` joint samples of (G, X, Y, V) from the structural chain.

    G and V are independent standard normals; X and Y follow the linear
    structural equations with error scales sqrt(var_x), sqrt(var_y).
    """
    if n < 1:
        raise InvalidInputError("sample count n must be >= 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, model.p))
    v = rng.standard_normal(n)
    beta = np.asarray(model.beta_x)
    alpha = np.asarray(model.alpha)
    x = (model.beta_x0 + g @ beta + model.gamma_x * v
         + math.sqrt(model.var_x) * _unit_noise(rng, model.err_x, n))
    y = (model.theta0 + model.theta * x + g @ alpha + model.gamma_y * v
         + math.sqrt(model.var_y) * _unit_noise(rng, model.err_y, n))
    return SampleBatch(g=g, x=x, y=y, v=v)


def _univariate_slopes(g: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column OLS slope of ``target`` on each instrument, with SEs."""
    n = g.shape[0]
    gc = g - g.mean(axis=0)
    tc = target - target.mean()
    sxx = np.einsum("ij,ij->j", gc, gc)
    if np.any(sxx == 0.0):
        j = int(np.flatnonzero(sxx == 0.0)[0])
        raise SingularityError(f"instrument column {j + 1} is constant")
    slopes = (gc.T @ tc) / sxx
    # RSS via the identity sum(tc^2) - slope^2 * sxx; clamp tiny negatives
    rss = np.maximum(np.dot(tc, tc) - slopes ** 2 * sxx, 0.0)
    se = np.sqrt(rss / (n - 2) / sxx)
    return slopes, se


def summary_stats(batch: SampleBatch) -> SummaryStats:
    """Univariate regression summaries of X and Y on each instrument column."""
    if batch.n < batch.p + 2:
        raise InvalidInputError(
            f"need n >= p + 2 samples for standard errors (n={batch.n}, p={batch.p})"
        )
    bx, se_x = _univariate_slopes(batch.g, batch.x)
    by, se_y = _univariate_slopes(batch.g, batch.y)
    return SummaryStats(beta_hat_x=bx, beta_hat_y=by, se_x=se_x, se_y=se_y)


# --------------------------------------------------------------------------
# gain estimators
# --------------------------------------------------------------------------

def _outcome_weights(se_y: np.ndarray) -> np.ndarray:
    """Inverse-variance weights, degrading to equal weights when SEs vanish.

    Zero standard errors happen in noiseless oracle runs; those instruments
    are exact, so they get the largest finite weight present (or 1.0 when
    every instrument is exact).  Weighted means are invariant under a common
    scale, so weights are expressed relative to the smallest positive SE;
    1/se^2 would overflow for denormal SEs.
    """
    w = np.empty_like(se_y)
    positive = se_y > 0
    if np.any(positive):
        ref = se_y[positive].min()
        w[positive] = (ref / se_y[positive]) ** 2
        w[~positive] = 1.0
    else:
        w[:] = 1.0
    return w


def estimate_theta(stats: SummaryStats) -> float:
    """Closed-form inverse-variance-weighted gain estimate.

    Minimizes sum_j (beta_hat_y_j - beta_hat_x_j * theta)^2 / se_y_j^2; the
    objective is a 1-D quadratic, so the minimizer is the weighted ratio.
    """
    if not np.any(stats.beta_hat_x != 0.0):
        raise NoInstrumentError("all instrument effects on X are zero")
    w = _outcome_weights(stats.se_y)
    denom = np.sum(w * stats.beta_hat_x ** 2)
    if denom <= 0.0:
        raise NoInstrumentError("weighted instrument strength is zero")
    return float(np.sum(w * stats.beta_hat_x * stats.beta_hat_y) / denom)


def estimate_theta_intercept(stats: SummaryStats) -> tuple[float, float]:
    """Weighted least squares of beta_hat_y on beta_hat_x with an intercept.

    The intercept absorbs directional pleiotropy; returns (theta0_hat,
    theta_hat).
    """
    if stats.p < 2:
        raise UnderdeterminedError("intercept fit needs at least two instruments")
    bx = stats.beta_hat_x
    if np.ptp(bx) == 0.0:
        raise SingularityError("instrument effects all identical; slope undefined")
    w = _outcome_weights(stats.se_y)
    sw = w.sum()
    mx = np.sum(w * bx) / sw
    my = np.sum(w * stats.beta_hat_y) / sw
    sxx = np.sum(w * (bx - mx) ** 2)
    sxy = np.sum(w * (bx - mx) * (stats.beta_hat_y - my))
    theta = sxy / sxx
    theta0 = my - theta * mx
    return float(theta0), float(theta)


# --------------------------------------------------------------------------
# information diagnostics
# --------------------------------------------------------------------------

def _quantize(values: np.ndarray, bins: int) -> np.ndarray:
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros(values.size, dtype=np.int64)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    pos = counts[counts > 0].astype(float) / total
    return float(-np.sum(pos * np.log(pos)))


def conditional_mi(a, b, cond=None, bins: int = 8) -> float:
    """Plug-in conditional mutual information I(A;B|C) in nats.

    Each variable is quantized into ``bins`` equal-width cells; ``cond`` may
    be None (plain mutual information), a vector, or an (n, k) array whose
    columns are binned jointly.  The plug-in estimate is nonnegative by
    construction; tiny negative float residue is clamped to 0.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if bins < 2:
        raise InvalidInputError("bins must be >= 2")
    if a.size != b.size or a.size == 0:
        raise InvalidInputError("a and b must be equal-length nonempty vectors")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("inputs must be finite")

    ia = _quantize(a, bins)
    ib = _quantize(b, bins)
    if cond is None:
        ic = np.zeros(a.size, dtype=np.int64)
        n_c = 1
    else:
        cond = np.asarray(cond, dtype=float)
        if cond.ndim == 1:
            cond = cond[:, None]
        if cond.shape[0] != a.size:
            raise InvalidInputError("cond must have the same sample count as a")
        if not np.all(np.isfinite(cond)):
            raise InvalidInputError("inputs must be finite")
        ic = np.zeros(a.size, dtype=np.int64)
        for col in cond.T:
            ic = ic * bins + _quantize(col, bins)
        n_c = bins ** cond.shape[1]

    code = (ia * bins + ib) * n_c + ic
    counts = np.bincount(code, minlength=bins * bins * n_c)
    joint = counts.reshape(bins, bins, n_c)
    h_abc = _entropy(joint)
    h_ac = _entropy(joint.sum(axis=1))
    h_bc = _entropy(joint.sum(axis=0))
    h_c = _entropy(joint.sum(axis=(0, 1)))
    return max(h_ac + h_bc - h_abc - h_c, 0.0)


@dataclass(frozen=True)
class MarkovDiagnostics:
    """Measured statistics and verdicts for the three instrument conditions."""

    mi_gv: np.ndarray
    cmi_gy_given_xv: np.ndarray
    abs_effect_x: np.ndarray
    mi_threshold: float
    min_effect: float
    independence_ok: bool = field(init=False)
    exclusion_ok: bool = field(init=False)
    relevance_ok: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "independence_ok",
                           bool(self.mi_gv.max() < self.mi_threshold))
        object.__setattr__(self, "exclusion_ok",
                           bool(self.cmi_gy_given_xv.max() < self.mi_threshold))
        object.__setattr__(self, "relevance_ok",
                           bool(self.abs_effect_x.min() > self.min_effect))

    @property
    def all_ok(self) -> bool:
        return self.independence_ok and self.exclusion_ok and self.relevance_ok

    def to_dict(self) -> dict:
        return {
            "mi_gv": [float(v) for v in self.mi_gv],
            "cmi_gy_given_xv": [float(v) for v in self.cmi_gy_given_xv],
            "abs_effect_x": [float(v) for v in self.abs_effect_x],
            "mi_threshold": self.mi_threshold,
            "min_effect": self.min_effect,
            "independence_ok": self.independence_ok,
            "exclusion_ok": self.exclusion_ok,
            "relevance_ok": self.relevance_ok,
            "all_ok": self.all_ok,
        }


def validate_markov_conditions(batch: SampleBatch, bins: int = 8,
                               mi_threshold: float = 0.05,
                               min_effect: float = 0.05) -> MarkovDiagnostics:
    """Check the instrument conditions on one batch.

    (i) instruments independent of the confounder: max_j I(G_j; V) below
    ``mi_threshold``; (ii) exclusion: max_j I(G_j; Y | X, V) below the same
    threshold; (iii) relevance: min_j |beta_hat_x_j| above ``min_effect``.
    """
    cond = np.column_stack([batch.x, batch.v])
    mi_gv = np.array([conditional_mi(batch.g[:, j], batch.v, None, bins)
                      for j in range(batch.p)])
    cmi = np.array([conditional_mi(batch.g[:, j], batch.y, cond, bins)
                    for j in range(batch.p)])
    stats = summary_stats(batch)
    return MarkovDiagnostics(
        mi_gv=mi_gv,
        cmi_gy_given_xv=cmi,
        abs_effect_x=np.abs(stats.beta_hat_x),
        mi_threshold=mi_threshold,
        min_effect=min_effect,
    )
