"""Command-line front end: one TOML config, one seed, one output directory.

Every subcommand reads its section(s) from the config file, applies
``--set section.key=value`` overrides, runs the corresponding pipeline, and
writes CSV data files plus a ``manifest.json`` into the output directory.
All randomness flows from the single ``--seed``; reruns with the same seed
produce byte-identical artifacts.

Exit codes: 0 success, 1 domain or configuration error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:                       # python 3.10
    import tomli as tomllib

import numpy as np

from . import bounds as bounds_mod
from . import hawkes as hawkes_mod
from . import mfg as mfg_mod
from . import mr as mr_mod
from . import optics as optics_mod
from . import randomization as rand_mod
from . import runner as runner_mod
from .errors import ConfigurationError, OamsecError

COMMANDS = ("mr-estimate", "mfg-solve", "outage", "kl-ber", "hawkes-sim",
            "adversary", "bounds", "run-algo", "validate")


# --------------------------------------------------------------------------
# config plumbing
# --------------------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries line and column
        raise ConfigurationError(f"cannot parse {p}: {exc}") from exc


def apply_overrides(config: dict, pairs: list[str]) -> dict:
    """Apply repeatable ``--set section.key=value`` entries in order."""
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set needs key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if not key:
            raise UsageError(f"--set needs a nonempty key in {pair!r}")
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot descend into {part!r} of {key!r}")
        node[parts[-1]] = value
    return config


class UsageError(Exception):
    pass


def _noise_from(config: dict, seed: int) -> mfg_mod.NoiseSpec:
    section = dict(config.get("noise", {}))
    section["seed"] = seed
    return mfg_mod.NoiseSpec(**section)


def _grid_from(section: dict) -> mfg_mod.MFGGrid:
    return mfg_mod.MFGGrid(
        t_max=section.get("t_max", 1.0),
        x_min=section.get("x_min", -1.0),
        x_max=section.get("x_max", 2.0),
        nt=section.get("nt", 51),
        nx=section.get("nx", 51),
    )


def _write_manifest(out: Path, payload: dict) -> None:
    with open(out / "manifest.json", "w") as fh:
        json.dump(runner_mod._jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# subcommand handlers; each returns the manifest payload
# --------------------------------------------------------------------------

def cmd_mr_estimate(config: dict, seed: int, out: Path) -> dict:
    sec = config.get("mr", {})
    p = int(sec.get("p", 2))
    model = mr_mod.StructuralModel(
        p=p,
        beta_x0=sec.get("beta_x0", 0.0),
        beta_x=tuple(sec.get("beta_x", [0.6] * p)),
        gamma_x=sec.get("gamma_x", 0.3),
        theta0=sec.get("theta0", 0.0),
        theta=sec.get("theta", 0.5),
        alpha=tuple(sec.get("alpha", [0.0] * p)),
        gamma_y=sec.get("gamma_y", 0.3),
        var_x=sec.get("var_x", 1.0),
        var_y=sec.get("var_y", 1.0),
        err_x=sec.get("err_x", "normal"),
        err_y=sec.get("err_y", "normal"),
    )
    model.validate()
    n = int(sec.get("n", 5000))
    batch = mr_mod.generate_samples(model, n, seed)
    stats = mr_mod.summary_stats(batch)
    theta_ivw = mr_mod.estimate_theta(stats)
    result = {"n": n, "p": p, "theta_true": model.theta,
              "theta_ivw": theta_ivw}
    if p >= 2:
        theta0_hat, theta_hat = mr_mod.estimate_theta_intercept(stats)
        result["theta_egger"] = theta_hat
        result["egger_intercept"] = theta0_hat
    diag = mr_mod.validate_markov_conditions(
        batch,
        bins=int(sec.get("bins", 8)),
        mi_threshold=sec.get("mi_threshold", 0.05),
        min_effect=sec.get("min_effect", 0.05),
    )
    result["diagnostics"] = diag.to_dict()
    if sec.get("save_samples", False):
        batch.save_csv(out / "samples.csv")
    return result


def cmd_mfg_solve(config: dict, seed: int, out: Path) -> dict:
    sec = config.get("mfg", {})
    grid = _grid_from(sec)
    m0 = mfg_mod.gaussian_density(grid, sec.get("m0_center", 0.5),
                                  sec.get("m0_width", 0.1))
    result = mfg_mod.picard_solve(
        grid, m0,
        lambda_reg=sec.get("lambda_reg", 1.0),
        theta_bounds=(sec.get("theta_min", -10.0), sec.get("theta_max", 10.0)),
        noise=_noise_from(config, seed),
        damping=sec.get("damping", 1.0),
        tol=sec.get("tol", 1e-6),
        max_iter=int(sec.get("max_iter", 50)),
    )
    mfg_mod.export_field(result.field, out, residuals=result.residuals)
    last = result.residuals[-1] if len(result.residuals) else None
    return {"converged": result.converged, "iterations": result.iterations,
            "final_residual": last}


def _density_table(sec: dict) -> rand_mod.PdfTable:
    kind = sec.get("density", "uniform")
    lo = sec.get("lo", 0.0)
    hi = sec.get("hi", 1.0)
    points = int(sec.get("points", rand_mod.DEFAULT_TABLE_POINTS))
    if isinstance(kind, str) and kind.endswith(".csv"):
        return rand_mod.PdfTable.load_csv(kind)
    if kind == "uniform":
        return rand_mod.PdfTable.uniform(lo, hi, points)
    if kind == "triangular":
        mid = sec.get("peak", 0.5 * (lo + hi))

        def tri(x):
            left = np.clip((x - lo) / max(mid - lo, 1e-300), 0.0, None)
            right = np.clip((hi - x) / max(hi - mid, 1e-300), 0.0, None)
            return np.minimum(left, right)

        return rand_mod.PdfTable.from_function(tri, lo, hi, points)
    if kind == "gaussian":
        center = sec.get("center", 0.5 * (lo + hi))
        width = sec.get("width", (hi - lo) / 8.0)
        return rand_mod.PdfTable.from_function(
            lambda x: np.exp(-0.5 * ((x - center) / width) ** 2), lo, hi, points)
    raise ConfigurationError(f"unknown density {kind!r} "
                             "(use uniform, triangular, gaussian, or a .csv path)")


def cmd_outage(config: dict, seed: int, out: Path) -> dict:
    sec = config.get("outage", {})
    table = _density_table(sec)
    cfg = rand_mod.OutageConfig(
        pdf_table=table,
        phi1=sec.get("phi1", 0.0),
        phi2=sec.get("phi2"),
        theta_prime=sec.get("theta_prime", 1.0),
        mc_samples=int(sec.get("mc_samples", 100_000)),
        map_scale=sec.get("map_scale", 1.0),
        map_offset=sec.get("map_offset", 0.0),
    )
    result = rand_mod.outage_probability(cfg, seed=seed)
    table.save_csv(out / "pdf.csv")
    return result.to_dict()


def cmd_kl_ber(config: dict, seed: int, out: Path) -> dict:
    sec = config.get("kl", {})
    modes = tuple(int(m) for m in sec.get("modes", [-1, 0, 1]))
    amps = sec.get("amps", [1.0] * len(modes))
    beams = optics_mod.BeamSet(
        modes=modes,
        amps=np.asarray(amps, dtype=complex),
        turb_sigma=sec.get("turb_sigma", 0.3),
        ring_points=int(sec.get("ring_points", 64)),
    )
    cov, _ = optics_mod.empirical_covariance(
        beams, realizations=int(sec.get("realizations", 2000)), seed=seed)
    phis, weights = optics_mod.ring_grid(beams.ring_points)
    basis = optics_mod.nystrom_eigenpairs(cov, phis, weights)
    noise_var = sec.get("noise_var", 1.0)
    trunc = int(sec.get("trunc", min(8, len(basis.eigvals))))
    snr, ber = optics_mod.snr_ber(basis, noise_var, trunc)
    optics_mod.export_basis(basis, out)
    sweep = []
    for k in range(1, trunc + 1):
        s, b = optics_mod.snr_ber(basis, noise_var, k)
        sweep.append((k, s, b))
    import csv as _csv
    with open(out / "snr_ber.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["trunc", "snr", "ber"])
        for k, s, b in sweep:
            writer.writerow([k, repr(float(s)), repr(float(b))])
    return {"modes": list(modes), "trunc": trunc, "noise_var": noise_var,
            "snr": snr, "ber": ber,
            "eigvals_head": [float(v) for v in basis.eigvals[:5]]}


def cmd_hawkes_sim(config: dict, seed: int, out: Path) -> dict:
    sec = config.get("hawkes", {})
    model = hawkes_mod.HawkesModel.univariate(
        gamma=sec.get("gamma", 1.0),
        alpha=sec.get("alpha", 0.5),
        beta=sec.get("beta", 1.0),
        horizon=sec.get("horizon", 100.0),
    )
    state = hawkes_mod.simulate_hawkes(
        model, seed, allow_supercritical=bool(sec.get("allow_supercritical", False)))
    hawkes_mod.save_events_csv(state, out / "events.csv")
    return {"total_events": state.total_events,
            "horizon": model.horizon,
            "rate": state.total_events / model.horizon,
            "branching_ratio": model.branching_ratio}


def cmd_adversary(config: dict, seed: int, out: Path) -> dict:
    sec = config.get("adversary", {})
    if "offspring_mean" in sec:
        m = float(sec["offspring_mean"])
    else:
        hw = config.get("hawkes", {})
        model = hawkes_mod.HawkesModel.univariate(
            gamma=hw.get("gamma", 1.0), alpha=hw.get("alpha", 0.5),
            beta=hw.get("beta", 1.0), horizon=hw.get("horizon", 100.0))
        m = model.branching_ratio
    region = None
    if "omega_sides" in sec:
        region = hawkes_mod.LatticeRegion(
            omega_sides=tuple(sec["omega_sides"]),
            cte=sec.get("cte", 2.0),
            var_pp=sec.get("var_pp", 1.0),
            err_prob=sec.get("err_prob", 0.0),
        )
    adv = hawkes_mod.AdversaryState.from_offspring_mean(
        m, r_conv=sec.get("r_conv", 1e-3), region=region)
    report = hawkes_mod.adversary_report(adv, mode=sec.get("mode", "extinction"))
    with open(out / "adversary.json", "w") as fh:
        json.dump(runner_mod._jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def cmd_bounds(config: dict, seed: int, out: Path) -> dict:
    sec = config.get("bounds", {})
    params = bounds_mod.BoundParams(
        n=int(sec.get("n", 100)),
        c0=sec.get("c0", 0.0), c1=sec.get("c1", 0.0), c2=sec.get("c2", 0.0),
        c3=sec.get("c3", 0.0), c4=sec.get("c4", 0.0),
        m_norm_max=sec.get("m_norm_max", 1.0),
        varsigma1=sec.get("varsigma1", 0.0),
        varsigma2=sec.get("varsigma2", 1.0),
        theta_eve_minus=sec.get("theta_eve_minus", 0.0),
        theta_eve_plus=sec.get("theta_eve_plus", 0.0),
        kl_inf=sec.get("kl_inf", 0.0),
        set_size=sec.get("set_size", 1.0),
    )
    report = bounds_mod.convergence_probability(params, sec.get("problem", "P2"))
    report.save_json(out / "bounds.json")
    payload = report.to_dict()
    payload["azuma"] = bounds_mod.azuma_bound(params, int(sec.get("azuma_steps", 10)))
    payload["sanov"] = bounds_mod.sanov_bound(params)
    payload["hoeffding_mgf"] = bounds_mod.hoeffding_mgf_bound(
        params.theta_eve_minus, params.theta_eve_plus)
    return payload


def _algo_config(config: dict, seed: int, out: Path | None) -> runner_mod.AlgorithmConfig:
    mfg_sec = config.get("mfg", {})
    run_sec = config.get("runner", {})
    hw = config.get("hawkes", {})
    return runner_mod.AlgorithmConfig(
        grid=_grid_from(mfg_sec),
        mode=run_sec.get("mode", "P1"),
        r_conv=run_sec.get("r_conv", 1e-3),
        max_outer=int(run_sec.get("max_outer", 30)),
        m0_center=mfg_sec.get("m0_center", 0.5),
        m0_width=mfg_sec.get("m0_width", 0.1),
        lambda_reg=mfg_sec.get("lambda_reg", 1.0),
        theta_bounds=(mfg_sec.get("theta_min", -10.0),
                      mfg_sec.get("theta_max", 10.0)),
        damping=mfg_sec.get("damping", 1.0),
        picard_tol=mfg_sec.get("tol", 1e-6),
        picard_max_iter=int(mfg_sec.get("max_iter", 50)),
        hawkes_gamma=hw.get("gamma", 1.0),
        hawkes_alpha=hw.get("alpha", 0.0),
        hawkes_beta=hw.get("beta", 1.0),
        eve_mode=run_sec.get("eve_mode", "extinction"),
        noise=_noise_from(config, seed),
        emit_path=str(out) if out is not None else None,
    )


def cmd_run_algo(config: dict, seed: int, out: Path) -> dict:
    cfg = _algo_config(config, seed, out)
    records = runner_mod.run_algorithm1(cfg)
    return {"config_hash": runner_mod.config_hash(cfg),
            "mode": cfg.mode,
            "converged": bool(records[-1].converged),
            "iterations": len(records),
            "final_residual": records[-1].residual}


def cmd_validate(config: dict, seed: int, out: Path) -> dict:
    sec = config.get("validate", {})
    cfg = _algo_config(config, seed, None)
    bounds_payload = cmd_bounds(config, seed, out)
    params_sec = config.get("bounds", {})
    params = bounds_mod.BoundParams(
        n=int(params_sec.get("n", 100)),
        c0=params_sec.get("c0", 0.0), c1=params_sec.get("c1", 0.0),
        c2=params_sec.get("c2", 0.0), c3=params_sec.get("c3", 0.0),
        c4=params_sec.get("c4", 0.0),
        m_norm_max=params_sec.get("m_norm_max", 1.0),
        varsigma1=params_sec.get("varsigma1", 0.0),
        varsigma2=params_sec.get("varsigma2", 1.0),
        theta_eve_minus=params_sec.get("theta_eve_minus", 0.0),
        theta_eve_plus=params_sec.get("theta_eve_plus", 0.0),
        kl_inf=params_sec.get("kl_inf", 0.0),
        set_size=params_sec.get("set_size", 1.0),
    )
    report = bounds_mod.empirical_convergence_check(
        cfg, params,
        reps=int(sec.get("reps", 50)),
        problem=sec.get("problem", cfg.mode),
    )
    bounds_mod.save_validation_csv([report], out / "validation.csv")
    payload = report.to_dict()
    payload["bound_report"] = {k: bounds_payload[k]
                               for k in ("a", "b", "c", "p1", "p2")}
    return payload


_HANDLERS = {
    "mr-estimate": cmd_mr_estimate,
    "mfg-solve": cmd_mfg_solve,
    "outage": cmd_outage,
    "kl-ber": cmd_kl_ber,
    "hawkes-sim": cmd_hawkes_sim,
    "adversary": cmd_adversary,
    "bounds": cmd_bounds,
    "run-algo": cmd_run_algo,
    "validate": cmd_validate,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oamsec",
        description="Secure-gain estimation pipelines: causal estimation, "
                    "mean-field control, adversary simulation, and the "
                    "convergence-bound calculators.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        cp = sub.add_parser(name, help=f"run the {name} pipeline")
        cp.add_argument("--config", default=None,
                        help="TOML config file (sections per module)")
        cp.add_argument("--seed", type=int, default=None,
                        help="master seed; overrides [noise].seed")
        cp.add_argument("--out", default="out",
                        help="output directory (default: ./out)")
        cp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        dest="overrides",
                        help="override a config entry, e.g. --set mfg.nt=101")
        cp.add_argument("--quiet", action="store_true",
                        help="suppress the summary line")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        config = apply_overrides(load_config(args.config), args.overrides)
    except UsageError as exc:
        print(f"oamsec: {exc}", file=sys.stderr)
        return 2
    except (OamsecError, OSError) as exc:
        print(f"oamsec: {exc}", file=sys.stderr)
        return 1

    if args.seed is not None:
        seed = args.seed
    else:
        seed = int(config.get("noise", {}).get("seed", 0))
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        payload = _HANDLERS[args.command](config, seed, out)
        manifest = {"command": args.command, "seed": seed, **payload}
        _write_manifest(out, manifest)
    except (OamsecError, OSError, ValueError) as exc:
        print(f"oamsec: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        brief = {k: v for k, v in manifest.items()
                 if isinstance(v, (str, int, float, bool)) or v is None}
        print(json.dumps(runner_mod._jsonable(brief), sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
