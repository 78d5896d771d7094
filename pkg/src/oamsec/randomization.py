"""Design-matrix randomization and outage probability.

The design matrix is factored by SVD; the population density of the game is
assigned to a scalar factor on the leading left-singular direction, so the
randomized quality variable is theta' * Z with Z ~ M and theta' = theta *
beta_X.  Outage is the probability that this variable falls below a
threshold, estimated by inverse-CDF Monte Carlo on tabulated densities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import DegenerateScaleError, InvalidInputError
from .mr import StructuralModel

__all__ = [
    "SvdFactors",
    "PdfTable",
    "OutageConfig",
    "OutageResult",
    "decompose_design",
    "scaled_control_pdf",
    "inverse_cdf_sample",
    "outage_probability",
]

#: default resolution of tabulated densities
DEFAULT_TABLE_POINTS = 1024


# --------------------------------------------------------------------------
# SVD access to the design
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD G = u1 * diag(sigma) * u2 (u2 already transposed)."""

    u1: np.ndarray
    sigma: np.ndarray
    u2: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u1 * self.sigma) @ self.u2


def decompose_design(g: np.ndarray) -> SvdFactors:
    """Thin SVD of the design matrix with descending singular values."""
    g = np.asarray(g, dtype=float)
    if g.size == 0:
        raise InvalidInputError("design matrix is empty")
    if g.ndim != 2:
        raise InvalidInputError("design matrix must be 2-D")
    if not np.all(np.isfinite(g)):
        raise InvalidInputError("design matrix has non-finite entries")
    u1, sigma, u2 = np.linalg.svd(g, full_matrices=False)
    return SvdFactors(u1=u1, sigma=sigma, u2=u2)


# --------------------------------------------------------------------------
# tabulated densities
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PdfTable:
    """Density values on a uniform grid, trapezoid-normalized to mass 1."""

    xs: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        density = np.asarray(self.density, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.shape != density.shape:
            raise InvalidInputError("pdf table needs matching 1-D xs and density")
        steps = np.diff(xs)
        if np.any(steps <= 0):
            raise InvalidInputError("pdf grid must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-8, atol=1e-12):
            raise InvalidInputError("pdf grid must be uniform")
        if np.any(density < 0) or not np.all(np.isfinite(density)):
            raise InvalidInputError("density must be nonnegative and finite")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "density", density)

    @property
    def mass(self) -> float:
        return float(trapezoid(self.density, self.xs))

    def check_normalized(self, tol: float = 1e-6) -> None:
        if abs(self.mass - 1.0) > tol:
            raise InvalidInputError(f"density mass {self.mass} is not 1 +- {tol}")

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid of the density, scaled to end exactly at 1."""
        dx = self.xs[1] - self.xs[0]
        inner = np.cumsum(0.5 * (self.density[1:] + self.density[:-1]) * dx)
        cdf = np.concatenate([[0.0], inner])
        if cdf[-1] <= 0.0:
            raise InvalidInputError("density has zero total mass")
        return cdf / cdf[-1]

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], lo: float,
                      hi: float, points: int = DEFAULT_TABLE_POINTS,
                      normalize: bool = True) -> "PdfTable":
        if not hi > lo:
            raise InvalidInputError("need hi > lo")
        xs = np.linspace(lo, hi, points)
        density = np.maximum(np.asarray(fn(xs), dtype=float), 0.0)
        if normalize:
            mass = trapezoid(density, xs)
            if mass <= 0:
                raise InvalidInputError("density is identically zero on [lo, hi]")
            density = density / mass
        return cls(xs=xs, density=density)

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0,
                points: int = DEFAULT_TABLE_POINTS) -> "PdfTable":
        return cls.from_function(lambda x: np.ones_like(x), lo, hi, points)

    def save_csv(self, path: str | Path) -> None:
        """Two-column CSV (x, density)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "density"])
            for x, d in zip(self.xs, self.density):
                writer.writerow([repr(float(x)), repr(float(d))])

    @classmethod
    def load_csv(cls, path: str | Path) -> "PdfTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["x", "density"]:
                raise InvalidInputError(f"bad pdf table header in {path}: {header!r}")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        if len(rows) < 2:
            raise InvalidInputError(f"pdf table {path} has fewer than 2 rows")
        data = np.asarray(rows, dtype=float)
        return cls(xs=data[:, 0], density=data[:, 1])


def scaled_control_pdf(pdf_table: PdfTable, theta_prime: float) -> PdfTable:
    """Density of theta' * Z for Z ~ pdf_table: (1/|theta'|) M(x / theta').

    An affine change of variables, so the trapezoid mass is preserved
    exactly; a negative scale flips the support.
    """
    if theta_prime == 0.0 or not math.isfinite(theta_prime):
        raise DegenerateScaleError("theta_prime must be nonzero and finite")
    xs = pdf_table.xs * theta_prime
    density = pdf_table.density / abs(theta_prime)
    if theta_prime < 0:
        xs = xs[::-1].copy()
        density = density[::-1].copy()
    return PdfTable(xs=xs, density=density)


def inverse_cdf_sample(pdf_table: PdfTable, u: Sequence[float]) -> np.ndarray:
    """Map uniforms through the tabulated inverse CDF.

    The CDF is the cumulative trapezoid of the density; inversion is
    monotone linear interpolation on the grid nodes.
    """
    u = np.asarray(u, dtype=float)
    if u.size and (np.any(u < 0.0) or np.any(u > 1.0) or not np.all(np.isfinite(u))):
        raise InvalidInputError("uniform draws must lie in [0, 1]")
    cdf = pdf_table.cdf()
    return np.interp(u, cdf, pdf_table.xs)


# --------------------------------------------------------------------------
# outage probability
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OutageConfig:
    """Thresholds, scale factor, and sampling budget of one outage study.

    ``phi2`` defaults to the affine image map_scale * phi1 + map_offset of
    ``phi1`` (identity map by default).  ``theta_prime`` may be None when a
    structural model is supplied to :func:`outage_probability`, which then
    uses theta * beta_x[0].
    """

    pdf_table: PdfTable
    phi1: float = 0.0
    phi2: float | None = None
    theta_prime: float | None = 1.0
    mc_samples: int = 100_000
    map_scale: float = 1.0
    map_offset: float = 0.0

    def __post_init__(self):
        if self.phi2 is None:
            object.__setattr__(self, "phi2",
                               self.map_scale * self.phi1 + self.map_offset)
        if self.theta_prime is not None and self.theta_prime == 0.0:
            raise DegenerateScaleError("theta_prime must be nonzero")


@dataclass(frozen=True)
class OutageResult:
    estimate: float
    stderr: float
    samples: int
    threshold: float

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr,
                "samples": self.samples, "threshold": self.threshold}


def outage_probability(config: OutageConfig,
                       model: StructuralModel | None = None,
                       seed: int = 0) -> OutageResult:
    """Monte Carlo Pr(theta' * Z <= phi2) with binomial standard error.

    Draws Z through the inverse CDF of the game density, scales by theta'
    (taken from ``model`` as theta * beta_x[0] when the config leaves it
    unset), and counts threshold crossings.
    """
    if config.mc_samples < 100:
        raise InvalidInputError("mc_samples must be >= 100")
    theta_prime = config.theta_prime
    if theta_prime is None:
        if model is None:
            raise InvalidInputError("theta_prime unset and no model given")
        theta_prime = model.theta * model.beta_x[0]
    if theta_prime == 0.0:
        raise DegenerateScaleError("theta_prime must be nonzero")
    config.pdf_table.check_normalized()
    scaled = scaled_control_pdf(config.pdf_table, theta_prime)
    rng = np.random.default_rng(seed)
    draws = inverse_cdf_sample(scaled, rng.uniform(0.0, 1.0, config.mc_samples))
    hits = float(np.count_nonzero(draws <= config.phi2))
    estimate = hits / config.mc_samples
    stderr = math.sqrt(estimate * (1.0 - estimate) / config.mc_samples)
    return OutageResult(estimate=estimate, stderr=stderr,
                        samples=config.mc_samples, threshold=float(config.phi2))
