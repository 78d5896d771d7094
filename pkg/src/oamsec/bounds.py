"""Closed-form concentration bounds for the convergence guarantee.

Three tail factors enter the guarantee: a kernel-density L1 term
a = 2 exp(-n c1^2 / 2), a randomly-weighted-sum term
b = 2 exp(-c2^2 / (2 max_n ||M_n||^2)), and an extinction-coupling term
c = exp((1/8)(theta_Eve(v-) - theta_Eve(v+))^2 - c3).  The first problem
keeps factors a and b; the second also pays the c factor.  Raw factors can
leave [0, 1] for small n, so every assembled probability is clamped and the
clamping is flagged rather than hidden.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, OamsecError

__all__ = [
    "BoundParams",
    "BoundReport",
    "ValidationReport",
    "bound_terms",
    "convergence_probability",
    "azuma_bound",
    "sanov_bound",
    "hoeffding_mgf_bound",
    "empirical_convergence_check",
    "save_validation_csv",
]


@dataclass(frozen=True)
class BoundParams:
    """Constants feeding the tail factors.

    ``m_norm_max`` is the largest row 2-norm over the density iterates;
    ``varsigma1``/``varsigma2`` bound the per-step martingale increments;
    ``kl_inf`` and ``set_size`` parameterize the large-deviation term.
    """

    n: int = 100
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    c4: float = 0.0
    m_norm_max: float = 1.0
    varsigma1: float = 0.0
    varsigma2: float = 1.0
    theta_eve_minus: float = 0.0
    theta_eve_plus: float = 0.0
    kl_inf: float = 0.0
    set_size: float = 1.0

    def __post_init__(self):
        if self.n < 0:
            raise InvalidInputError("n must be >= 0")
        for name in ("c0", "c1", "c2", "c3", "c4", "m_norm_max",
                     "kl_inf", "set_size"):
            val = getattr(self, name)
            if not (val >= 0 and math.isfinite(val)):
                raise InvalidInputError(f"{name} must be >= 0 and finite")
        for name in ("varsigma1", "varsigma2",
                     "theta_eve_minus", "theta_eve_plus"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")


@dataclass(frozen=True)
class BoundReport:
    """Assembled guarantee with clamping provenance."""

    a: float
    b: float
    c: float
    p1: float
    p2: float
    varrho: float
    complexity: float
    clamped: dict[str, bool]
    problem: str

    def to_dict(self) -> dict:
        return {
            "a": self.a, "b": self.b, "c": self.c,
            "p1": self.p1, "p2": self.p2,
            "varrho": self.varrho, "complexity": self.complexity,
            "clamped": dict(self.clamped), "problem": self.problem,
        }

    def save_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def bound_terms(params: BoundParams) -> tuple[float, float, float]:
    """Raw tail factors (a, b, c) without clamping."""
    if params.m_norm_max <= 0:
        raise InvalidInputError("m_norm_max must be > 0")
    a = 2.0 * math.exp(-params.n * params.c1 ** 2 / 2.0)
    b = 2.0 * math.exp(-params.c2 ** 2 / (2.0 * params.m_norm_max ** 2))
    delta = params.theta_eve_minus - params.theta_eve_plus
    c = math.exp(delta ** 2 / 8.0 - params.c3)
    return a, b, c


def _clamp01(x: float) -> tuple[float, bool]:
    if x < 0.0:
        return 0.0, True
    if x > 1.0:
        return 1.0, True
    return x, False


def convergence_probability(params: BoundParams,
                            problem: str = "P2") -> BoundReport:
    """Assemble p1 = (1-a)(1-b) and p2 = p1 (1-c), clamped into [0, 1].

    The failure mass varrho is 1 - p1 for the first problem and 1 - p2 for
    the second; complexity is ln(1/varrho), infinite (and flagged) when the
    bound is vacuous.
    """
    if problem not in ("P1", "P2"):
        raise InvalidInputError("problem must be 'P1' or 'P2'")
    a, b, c = bound_terms(params)
    fa, ca = _clamp01(1.0 - a)
    fb, cb = _clamp01(1.0 - b)
    fc, cc = _clamp01(1.0 - c)
    p1, cp1 = _clamp01(fa * fb)
    p2, cp2 = _clamp01(p1 * fc)
    varrho = 1.0 - (p1 if problem == "P1" else p2)
    if varrho > 0.0:
        complexity = math.log(1.0 / varrho)
        cinf = False
    else:
        complexity = math.inf
        cinf = True
    return BoundReport(
        a=a, b=b, c=c, p1=p1, p2=p2, varrho=varrho, complexity=complexity,
        clamped={"a": ca, "b": cb, "c": cc, "p1": cp1, "p2": cp2,
                 "complexity": cinf},
        problem=problem,
    )


def azuma_bound(params: BoundParams, steps: int) -> float:
    """Two-sided martingale deviation bound 2 exp(-2 c0^2 / sum (s2-s1)^2).

    Identical increment bounds give a zero denominator; the tail is then 0
    for any positive deviation and 1 (the clamped trivial bound) at c0 = 0.
    """
    if steps < 0:
        raise InvalidInputError("steps must be >= 0")
    if params.varsigma2 < params.varsigma1:
        raise InvalidInputError("varsigma2 must be >= varsigma1")
    denom = steps * (params.varsigma2 - params.varsigma1) ** 2
    if denom == 0.0:
        return 1.0 if params.c0 == 0.0 else 0.0
    raw = 2.0 * math.exp(-2.0 * params.c0 ** 2 / denom)
    return min(raw, 1.0)


def sanov_bound(params: BoundParams) -> float:
    """Large-deviation count bound: set_size * exp(-n * kl_inf)."""
    return params.set_size * math.exp(-params.n * params.kl_inf)


def hoeffding_mgf_bound(theta_minus: float, theta_plus: float) -> float:
    """MGF bound for a variable confined to [theta_plus, theta_minus]:
    E exp(X) <= exp((1/8)(theta_minus - theta_plus)^2)."""
    if not (math.isfinite(theta_minus) and math.isfinite(theta_plus)):
        raise InvalidInputError("theta bounds must be finite")
    return math.exp((theta_minus - theta_plus) ** 2 / 8.0)


# --------------------------------------------------------------------------
# empirical one-sided validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    """One-sided Monte Carlo check of the claimed lower bound."""

    reps: int
    successes: int
    frequency: float
    bound: float
    slack: float
    passed: bool
    problem: str
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "reps": self.reps, "successes": self.successes,
            "frequency": self.frequency, "bound": self.bound,
            "slack": self.slack, "passed": self.passed,
            "problem": self.problem, "config_hash": self.config_hash,
        }


def empirical_convergence_check(config, params: BoundParams, reps: int,
                                problem: str = "P1",
                                run: Callable[[object, int], bool] | None = None,
                                ) -> ValidationReport:
    """Run the outer algorithm ``reps`` times and test f_hat against the bound.

    The guarantee is a lower bound on the convergence probability, so the
    check is one-sided: f_hat + 3 sqrt(f_hat (1 - f_hat) / reps) must reach
    the claimed p.  A failure here indicates a soundness bug, not tuning.
    ``run`` may replace the default runner (it gets the config and a seed
    and returns the converged flag).
    """
    if reps < 50:
        raise InvalidInputError("reps must be >= 50 for a stable frequency")
    report = convergence_probability(params, problem)
    bound = report.p1 if problem == "P1" else report.p2
    if run is None:
        from .runner import run_algorithm1, with_seed

        def run(cfg, seed):
            return run_algorithm1(with_seed(cfg, seed))[-1].converged

    base = getattr(getattr(config, "noise", None), "seed", 0)
    seeds = [int(s.generate_state(1)[0])
             for s in np.random.SeedSequence(base).spawn(reps)]
    successes = 0
    for i, seed in enumerate(seeds):
        try:
            ok = bool(run(config, seed))
        except OamsecError as exc:
            raise type(exc)(f"replication {i} (seed {seed}) failed: {exc}") from exc
        successes += int(ok)
    f_hat = successes / reps
    slack = 3.0 * math.sqrt(f_hat * (1.0 - f_hat) / reps)
    from .runner import config_hash
    return ValidationReport(
        reps=reps, successes=successes, frequency=f_hat, bound=bound,
        slack=slack, passed=(f_hat + slack >= bound), problem=problem,
        config_hash=config_hash(config),
    )


def save_validation_csv(reports: Sequence[ValidationReport],
                        path: str | Path) -> None:
    """Validation matrix rows: config hash, measured frequency, bound, pass."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config_hash", "frequency", "bound", "passed"])
        for rep in reports:
            writer.writerow([rep.config_hash, repr(rep.frequency),
                             repr(rep.bound), int(rep.passed)])
