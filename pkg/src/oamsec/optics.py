"""Ring-sampled OAM irradiance and its Karhunen-Loeve expansion.

A superposition of azimuthal modes exp(i l phi) is sampled on K points of a
fixed-radius ring; turbulence is a per-mode Gaussian phase kick.  The
irradiance covariance (empirical or analytic) is eigen-decomposed by the
Nystrom method with quadrature weights, giving the KL basis, the truncated
signal energy (Parseval), the average SNR, and the binary-antipodal BER
Q(sqrt(SNR)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AliasingError, InvalidInputError

__all__ = [
    "BeamSet",
    "KLBasis",
    "ring_grid",
    "irradiance_field",
    "irradiance_realizations",
    "empirical_covariance",
    "nystrom_eigenpairs",
    "kl_coefficients",
    "kl_reconstruct",
    "snr_ber",
    "export_basis",
]


@dataclass(frozen=True)
class BeamSet:
    """OAM mode indices, complex amplitudes, turbulence level, ring size."""

    modes: tuple[int, ...]
    amps: np.ndarray
    turb_sigma: float = 0.0
    ring_points: int = 64

    def __post_init__(self):
        modes = tuple(int(m) for m in self.modes)
        amps = np.asarray(self.amps, dtype=complex).ravel()
        if len(modes) == 0:
            raise InvalidInputError("beam set needs at least one mode")
        if len(set(modes)) != len(modes):
            raise InvalidInputError("mode indices must be distinct")
        if amps.size != len(modes):
            raise InvalidInputError("amps must match the number of modes")
        if not np.all(np.isfinite(amps.view(float))):
            raise InvalidInputError("amplitudes must be finite")
        if not (math.isfinite(self.turb_sigma) and self.turb_sigma >= 0):
            raise InvalidInputError("turb_sigma must be >= 0")
        if self.ring_points < 1:
            raise InvalidInputError("ring_points must be >= 1")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "amps", amps)

    @property
    def nyquist_bound(self) -> int:
        return 2 * max(abs(m) for m in self.modes) + 1


def ring_grid(ring_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Azimuthal sample points 2 pi k / K and their periodic quadrature
    weights (uniform 2 pi / K; the trapezoid rule on a closed ring)."""
    phis = 2.0 * np.pi * np.arange(ring_points) / ring_points
    weights = np.full(ring_points, 2.0 * np.pi / ring_points)
    return phis, weights


def _check_nyquist(beams: BeamSet) -> None:
    if beams.ring_points < beams.nyquist_bound:
        raise AliasingError(
            f"ring_points={beams.ring_points} below the Nyquist bound "
            f"{beams.nyquist_bound} for modes {beams.modes}"
        )


def irradiance_realizations(beams: BeamSet, count: int, seed: int) -> np.ndarray:
    """``count`` independent irradiance fields, one row per realization.

    Each realization draws fresh per-mode phase kicks eps_l ~ N(0,
    turb_sigma^2): I(phi_k) = |sum_l a_l exp(i(l phi_k + eps_l))|^2.
    """
    _check_nyquist(beams)
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    phis, _ = ring_grid(beams.ring_points)
    rng = np.random.default_rng(seed)
    modes = np.asarray(beams.modes, dtype=float)
    eps = rng.normal(0.0, beams.turb_sigma, (count, modes.size)) \
        if beams.turb_sigma > 0 else np.zeros((count, modes.size))
    coeff = beams.amps * np.exp(1j * eps)                   # (count, modes)
    basis = np.exp(1j * np.outer(modes, phis))              # (modes, K)
    field = coeff @ basis                                   # (count, K)
    return np.abs(field) ** 2


def irradiance_field(beams: BeamSet, seed: int) -> np.ndarray:
    """One ring-sampled irradiance realization (deterministic under seed)."""
    return irradiance_realizations(beams, 1, seed)[0]


def empirical_covariance(beams: BeamSet, realizations: int = 2000,
                         seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance kernel of the irradiance over the ring.

    Returns (kernel, mean_field); the kernel is the centered covariance
    across ``realizations`` independent turbulence draws.
    """
    if realizations < 2:
        raise InvalidInputError("need at least 2 realizations")
    fields = irradiance_realizations(beams, realizations, seed)
    mean = fields.mean(axis=0)
    centered = fields - mean
    kernel = centered.T @ centered / (realizations - 1)
    return kernel, mean


@dataclass(frozen=True)
class KLBasis:
    """Eigen-structure of a covariance kernel under quadrature weights.

    ``eigfuncs`` columns are orthonormal in the weighted inner product
    sum_k w_k phi_m(k) phi_n(k); ``coeffs`` (optional) holds projection
    coefficients a_n per realization, one row each.
    """

    grid: np.ndarray
    weights: np.ndarray
    kernel: np.ndarray
    eigvals: np.ndarray
    eigfuncs: np.ndarray
    trunc: int
    coeffs: np.ndarray | None = None


def nystrom_eigenpairs(kernel: np.ndarray, grid: Sequence[float],
                       weights: Sequence[float] | None = None) -> KLBasis:
    """Discretize the covariance eigenproblem with quadrature weights.

    Symmetrizes via B = sqrt(W) K sqrt(W), solves the dense symmetric
    eigenproblem, and maps back so the eigenfunctions are orthonormal under
    the weights.  ``weights`` defaults to the trapezoid rule on ``grid``;
    pass explicit weights for periodic (ring) grids or discrete kernels.
    Eigenvalues are clipped at 0 (tolerating -1e-10 rounding) and sorted
    descending.
    """
    kernel = np.asarray(kernel, dtype=float)
    grid = np.asarray(grid, dtype=float).ravel()
    k = grid.size
    if kernel.shape != (k, k):
        raise InvalidInputError("kernel must be square and match the grid")
    if not np.all(np.isfinite(kernel)):
        raise InvalidInputError("kernel has non-finite entries")
    if np.abs(kernel - kernel.T).max() > 1e-10:
        raise InvalidInputError("kernel must be symmetric to 1e-10")
    if weights is None:
        if k < 2:
            raise InvalidInputError("trapezoid weights need at least 2 points")
        h = np.diff(grid)
        weights = np.zeros(k)
        weights[:-1] += 0.5 * h
        weights[1:] += 0.5 * h
    else:
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != (k,) or np.any(weights <= 0):
            raise InvalidInputError("weights must be positive, one per node")

    sqrt_w = np.sqrt(weights)
    b = kernel * np.outer(sqrt_w, sqrt_w)
    vals, vecs = np.linalg.eigh(b)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    if vals.size and vals[-1] < -1e-10 * max(1.0, abs(vals[0])):
        raise InvalidInputError("kernel is not positive semidefinite")
    vals = np.maximum(vals, 0.0)
    funcs = vecs[:, order] / sqrt_w[:, None]
    return KLBasis(grid=grid, weights=weights, kernel=kernel, eigvals=vals,
                   eigfuncs=funcs, trunc=k)


def kl_coefficients(basis: KLBasis, realizations: np.ndarray,
                    trunc: int | None = None) -> KLBasis:
    """Project realizations onto the KL basis: a_n = <X, phi_n> / sqrt(l_n).

    Rows of ``realizations`` are fields on the basis grid; they are centered
    before projection.  Modes with vanishing eigenvalues (below 1e-12 of the
    leading one) are dropped from the truncation.  Returns a new basis with
    ``coeffs`` filled (one row per realization).
    """
    fields = np.atleast_2d(np.asarray(realizations, dtype=float))
    if fields.shape[1] != basis.grid.size:
        raise InvalidInputError("realizations must live on the basis grid")
    n = trunc if trunc is not None else basis.trunc
    if not 1 <= n <= basis.eigvals.size:
        raise InvalidInputError("trunc out of range")
    floor = 1e-12 * max(basis.eigvals[0], 1e-300)
    n = min(n, int(np.count_nonzero(basis.eigvals > floor)))
    if n == 0:
        raise InvalidInputError("kernel has no usable eigenvalues")
    centered = fields - fields.mean(axis=0)
    proj = centered @ (basis.weights[:, None] * basis.eigfuncs[:, :n])
    coeffs = proj / np.sqrt(basis.eigvals[:n])
    return replace(basis, coeffs=coeffs, trunc=n)


def kl_reconstruct(basis: KLBasis, trunc: int) -> tuple[np.ndarray, float]:
    """Truncated kernel sum_{n<=N} l_n phi_n phi_n^T and its Frobenius error."""
    if not 1 <= trunc <= basis.eigvals.size:
        raise InvalidInputError("trunc must lie in [1, K]")
    funcs = basis.eigfuncs[:, :trunc]
    approx = (funcs * basis.eigvals[:trunc]) @ funcs.T
    err = float(np.linalg.norm(basis.kernel - approx))
    return approx, err


def q_function(x: float) -> float:
    """Gaussian tail Q(x) = P(N(0,1) > x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def snr_ber(basis: KLBasis, noise_var: float,
            trunc: int | None = None) -> tuple[float, float]:
    """Average SNR from truncated KL energy, and the matching BER.

    Parseval gives the truncated signal energy as sum_{n<=N} l_n, so
    avg_snr = energy / noise_var and ber = Q(sqrt(avg_snr)) for the
    binary-antipodal detector.
    """
    if not (noise_var > 0 and math.isfinite(noise_var)):
        raise InvalidInputError("noise_var must be positive and finite")
    n = trunc if trunc is not None else basis.trunc
    if not 1 <= n <= basis.eigvals.size:
        raise InvalidInputError("trunc out of range")
    energy = float(basis.eigvals[:n].sum())
    avg_snr = energy / noise_var
    return avg_snr, q_function(math.sqrt(avg_snr))


def export_basis(basis: KLBasis, out_dir: str | Path) -> list[Path]:
    """Write kernel.csv, eigvals.csv (n, lambda), eigfuncs.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    kernel_path = out / "kernel.csv"
    np.savetxt(kernel_path, basis.kernel, delimiter=",", fmt="%.17g")
    paths.append(kernel_path)
    eig_path = out / "eigvals.csv"
    with open(eig_path, "w") as fh:
        fh.write("n,eigenvalue\n")
        for i, val in enumerate(basis.eigvals, start=1):
            fh.write(f"{i},{float(val)!r}\n")
    paths.append(eig_path)
    funcs_path = out / "eigfuncs.csv"
    np.savetxt(funcs_path, basis.eigfuncs, delimiter=",", fmt="%.17g")
    paths.append(funcs_path)
    return paths
