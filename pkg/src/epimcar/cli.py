"""Command-line interface: simulate, expected, fit, report.

Every command resolves its options (flags override a flat JSON config file,
which overrides built-in defaults), runs one pipeline stage on files, and
writes a manifest recording the resolved configuration, input hashes and
diagnostics.  Exit codes: 2 for configuration/schema problems, 3 for
preprocessing failures, 4 for inference failures.
"""

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import io
from .expected import (
    EmptyMonth,
    InsufficientData,
    MalformedRecord,
    Separation,
    aggregate_episodes,
    apply_expected_floor,
    count_tables,
    expected_panel,
    standardized_probs,
)
from .inference import covariance_report, relative_risk_summary
from .linalg import NotPositiveDefinite
from .model import CountPanel, HyperParams, ProximitySpec
from .sampler import ChainConfig, NonFiniteDensity, dic, run_chains
from .simulate import (
    scenario_five_virus,
    scenario_three_virus,
    simulate,
    truncate_scenario,
)

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_PREPROCESSING = 3
EXIT_INFERENCE = 4

_PROXIMITY_ALIASES = {
    "neigh": "neighborhood",
    "neighborhood": "neighborhood",
    "auto": "autoregressive",
    "autoregressive": "autoregressive",
}


class ConfigError(ValueError):
    """Invalid command configuration (maps to exit code 2)."""


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _resolve_out(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _proximity_from(args) -> ProximitySpec:
    kind = _PROXIMITY_ALIASES.get(args.proximity)
    if kind is None:
        raise ConfigError(f"unknown proximity {args.proximity!r} (use neigh or auto)")
    return ProximitySpec(
        kind=kind, neighbor_order=args.neighbor_order, circular=not args.linear_months
    )


def _chain_config_from(args) -> ChainConfig:
    try:
        return ChainConfig(
            n_chains=args.chains,
            n_iterations=args.iterations,
            burn_in=args.burn_in,
            thin=args.thin,
            seed=args.seed,
            n_workers=args.workers,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _hyper_from(args) -> HyperParams:
    try:
        return HyperParams(
            alpha_prior_mean=args.alpha_prior_mean,
            alpha_prior_sd=args.alpha_prior_sd,
            sigma_prior_shape=args.sigma_prior_shape,
            sigma_prior_rate=args.sigma_prior_rate,
            gamma_entry_prior_sd=args.gamma_prior_sd,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _manifest_base(command: str, args, inputs: list[Path]) -> dict:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    return {
        "command": command,
        "config": resolved,
        "timestamp": _utc_now(),
        "inputs": {str(p): io.sha256_file(p) for p in inputs},
    }


# -- commands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    out = _resolve_out(args.out)
    started = time.monotonic()
    if args.preset == "three-virus":
        scenario = scenario_three_virus()
    elif args.preset == "five-virus":
        scenario = scenario_five_virus()
    else:
        raise ConfigError(f"unknown preset {args.preset!r}")
    if args.years is not None:
        scenario = truncate_scenario(scenario, args.years)
    if args.samples_per_month is not None:
        if args.samples_per_month < 1:
            raise ConfigError("samples-per-month must be >= 1")
        scenario.samples_per_month = args.samples_per_month
    if args.observed_mode is not None:
        if args.observed_mode not in ("product", "poisson"):
            raise ConfigError("observed-mode must be product or poisson")
        scenario.observed_mode = args.observed_mode

    result = simulate(scenario, args.seed, expected_floor=args.expected_floor)
    io.write_episode_csv(out / "episodes.csv", result.records, scenario.virus_names)
    io.write_panel_csv(out / "panel.csv", result.panel)
    io.write_truth_json(out / "truth.json", result)

    manifest = _manifest_base("simulate", args, [])
    manifest.update(
        {
            "runtime_seconds": time.monotonic() - started,
            "outputs": ["episodes.csv", "panel.csv", "truth.json"],
            "panel_shape": list(result.panel.observed.shape),
            "virus_names": scenario.virus_names,
        }
    )
    io.write_manifest(out / "manifest.json", manifest)
    return 0


def cmd_expected(args) -> int:
    out = _resolve_out(args.out)
    started = time.monotonic()
    episodes_path = Path(args.episodes)
    if not episodes_path.exists():
        raise ConfigError(f"episode file {episodes_path} not found")

    samples, virus_names = io.read_episode_csv(episodes_path)
    episodes = aggregate_episodes(samples, window_days=args.window_days)
    probs, fits = standardized_probs(
        episodes, virus_names, ridge_year=args.ridge_year, per_month=args.per_month_fits
    )
    diagnostics = {
        virus: [
            {
                "converged": fit.converged,
                "iterations": fit.iterations,
                "max_score_residual": fit.max_score_residual,
                "month": fit.month,
                "coefficients": fit.coefficients,
            }
            for fit in virus_fits
        ]
        for virus, virus_fits in fits.items()
    }
    nonconverged = [
        v for v, virus_fits in fits.items() if not all(f.converged for f in virus_fits)
    ]
    if nonconverged and not args.allow_nonconverged:
        io.write_manifest(out / "fit_diagnostics.json", diagnostics)
        logger.error("non-converged fits for %s", ", ".join(nonconverged))
        return EXIT_PREPROCESSING

    observed, n_tested, years = count_tables(episodes, virus_names)
    expected, zero_cells = expected_panel(probs, n_tested)
    expected = apply_expected_floor(expected, zero_cells, args.expected_floor)
    panel = CountPanel(
        observed=observed, expected=expected, virus_names=virus_names, n_tested=n_tested
    )

    io.write_expected_csv(out / "expected.csv", probs, n_tested, expected)
    io.write_panel_csv(out / "panel.csv", panel)
    io.write_manifest(out / "fit_diagnostics.json", diagnostics)

    manifest = _manifest_base("expected", args, [episodes_path])
    manifest.update(
        {
            "runtime_seconds": time.monotonic() - started,
            "outputs": ["expected.csv", "panel.csv", "fit_diagnostics.json"],
            "n_episodes": len(episodes),
            "calendar_years": years,
            "zero_expected_cells": [list(map(int, c)) for c in zero_cells],
            "virus_names": virus_names,
        }
    )
    io.write_manifest(out / "manifest.json", manifest)
    return 0


def _fit_samples(panel, args):
    proximity = _proximity_from(args)
    config = _chain_config_from(args)
    hyper = _hyper_from(args)
    if args.fix_rho is not None and proximity.kind != "autoregressive":
        raise ConfigError("--fix-rho only applies to the autoregressive construction")
    samples = run_chains(
        panel, proximity, hyper, config, fixed_rho=args.fix_rho
    )
    return samples, proximity, config


def cmd_fit(args) -> int:
    out = _resolve_out(args.out)
    started = time.monotonic()
    panel_path = Path(args.panel)
    if not panel_path.exists():
        raise ConfigError(f"panel file {panel_path} not found")
    panel = io.read_panel_csv(panel_path)

    samples, proximity, config = _fit_samples(panel, args)
    io.write_draws_csv(out / "draws.csv", samples)

    manifest = _manifest_base("fit", args, [panel_path])
    manifest.update(
        {
            "runtime_seconds": time.monotonic() - started,
            "outputs": ["draws.csv"],
            "proximity": proximity.kind,
            "fixed_rho": args.fix_rho,
            "chain_seeds": [config.seed + c for c in range(config.n_chains)],
            "n_draws": len(samples),
            "dic": dic(samples, panel),
            "accept_rates": samples.accept_rates,
            "rhat": samples.rhat,
            "rhat_flagged": sorted(
                k for k, v in (samples.rhat or {}).items() if v > 1.1
            ),
            "virus_names": panel.virus_names,
        }
    )
    io.write_manifest(out / "manifest.json", manifest)
    return 0


def cmd_report(args) -> int:
    out = _resolve_out(args.out)
    started = time.monotonic()
    inputs = []

    if args.by_year:
        if args.panel is None:
            raise ConfigError("--by-year needs --panel to refit on cumulative years")
        panel_path = Path(args.panel)
        if not panel_path.exists():
            raise ConfigError(f"panel file {panel_path} not found")
        inputs.append(panel_path)
        panel = io.read_panel_csv(panel_path)
        reports = {}
        for cut in range(1, panel.years + 1):
            sub = CountPanel(
                observed=panel.observed[:, :cut, :],
                expected=panel.expected[:, :cut, :],
                virus_names=panel.virus_names,
                n_tested=None if panel.n_tested is None else panel.n_tested[:, :cut, :],
            )
            samples, _, _ = _fit_samples(sub, args)
            reports[cut] = covariance_report(samples, level=args.level, fdr=args.fdr)
            logger.info(
                "year cut %d: significant pairs %s", cut, reports[cut].significant_pairs()
            )
        io.write_rolling_report_csv(out / "rolling_significance.csv", reports)
        final_report = reports[panel.years]
        samples_for_rr = samples  # the full-horizon fit from the last cut
    else:
        draws_path = Path(args.draws)
        if not draws_path.exists():
            raise ConfigError(f"draws file {draws_path} not found")
        inputs.append(draws_path)
        virus_names = None
        if args.fit_manifest:
            with open(args.fit_manifest) as fh:
                virus_names = json.load(fh).get("virus_names")
            inputs.append(Path(args.fit_manifest))
        samples = io.read_draws_csv(draws_path, virus_names=virus_names)
        if not samples.draws:
            raise ValueError("draws file holds no draws")
        final_report = covariance_report(samples, level=args.level, fdr=args.fdr)
        samples_for_rr = samples

    io.write_covariance_report_json(out / "covariance_report.json", final_report)
    io.write_covariance_report_csv(out / "covariance_report.csv", final_report)
    io.write_rr_summary_csv(
        out / "rr_summary.csv", relative_risk_summary(samples_for_rr, level=args.level)
    )

    manifest = _manifest_base("report", args, inputs)
    manifest.update(
        {
            "runtime_seconds": time.monotonic() - started,
            "outputs": ["covariance_report.json", "covariance_report.csv", "rr_summary.csv"]
            + (["rolling_significance.csv"] if args.by_year else []),
            "significant_pairs": final_report.significant_pairs(),
        }
    )
    io.write_manifest(out / "manifest.json", manifest)
    return 0


# -- argument parsing ----------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="flat JSON file with defaults for any flag")
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument("--out", default="out", help="output directory (created if missing)")


def _add_sampler_options(parser: argparse.ArgumentParser):
    parser.add_argument("--proximity", default="neigh", help="neigh or auto")
    parser.add_argument("--neighbor-order", type=int, default=3)
    parser.add_argument(
        "--linear-months",
        action="store_true",
        help="disable the circular December-January adjacency",
    )
    parser.add_argument("--fix-rho", type=float, default=None)
    parser.add_argument("--chains", type=int, default=5)
    parser.add_argument("--iterations", type=int, default=50_000)
    parser.add_argument("--burn-in", type=int, default=30_000)
    parser.add_argument("--thin", type=int, default=20)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--alpha-prior-mean", type=float, default=0.0)
    parser.add_argument("--alpha-prior-sd", type=float, default=10.0)
    parser.add_argument("--sigma-prior-shape", type=float, default=1.0)
    parser.add_argument("--sigma-prior-rate", type=float, default=1.0)
    parser.add_argument("--gamma-prior-sd", type=float, default=1.0)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="epimcar",
        description="Multi-virus relative-risk and covariance inference on monthly count panels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset with known truth")
    _add_common(p_sim)
    p_sim.add_argument("--preset", required=True, choices=["three-virus", "five-virus"])
    p_sim.add_argument("--years", type=int, default=None, help="truncate the preset horizon")
    p_sim.add_argument("--samples-per-month", type=int, default=None)
    p_sim.add_argument("--observed-mode", default=None, help="product or poisson")
    p_sim.add_argument("--expected-floor", type=float, default=0.5)
    p_sim.set_defaults(func=cmd_simulate)

    p_exp = sub.add_parser("expected", help="expected counts from an episode CSV")
    _add_common(p_exp)
    p_exp.add_argument("--episodes", required=True)
    p_exp.add_argument("--window-days", type=int, default=30)
    p_exp.add_argument("--ridge-year", type=float, default=1.0)
    p_exp.add_argument("--per-month-fits", action="store_true",
                       help="fit one regression per virus and month instead of a month factor")
    p_exp.add_argument("--allow-nonconverged", action="store_true")
    p_exp.add_argument("--expected-floor", type=float, default=0.5)
    p_exp.set_defaults(func=cmd_expected)

    p_fit = sub.add_parser("fit", help="run the MCMC sampler on a panel CSV")
    _add_common(p_fit)
    p_fit.add_argument("--panel", required=True)
    _add_sampler_options(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_rep = sub.add_parser("report", help="covariance and relative-risk reports")
    _add_common(p_rep)
    p_rep.add_argument("--draws", default=None, help="draws CSV from a previous fit")
    p_rep.add_argument("--fit-manifest", default=None, help="manifest of the fit (virus names)")
    p_rep.add_argument("--panel", default=None, help="panel CSV (required with --by-year)")
    p_rep.add_argument("--level", type=float, default=0.95)
    p_rep.add_argument("--fdr", type=float, default=0.05)
    p_rep.add_argument("--by-year", action="store_true",
                       help="refit cumulatively on years 1..k and report per-cut significance")
    _add_sampler_options(p_rep)
    p_rep.set_defaults(func=cmd_report)

    commands = {"simulate": p_sim, "expected": p_exp, "fit": p_fit, "report": p_rep}
    return parser, commands


def _parse_args(argv: list[str]) -> argparse.Namespace:
    """Parse argv, letting a flat JSON --config file supply defaults.

    Config values are installed as subcommand defaults before the real parse,
    so flags given on the command line always win.
    """
    parser, commands = build_parser()
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, rest = probe.parse_known_args(argv)
    if known.config:
        command = next((tok for tok in rest if not tok.startswith("-")), None)
        subparser = commands.get(command)
        if subparser is None:
            raise ConfigError("--config requires a recognised subcommand")
        try:
            with open(known.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {known.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a flat JSON object")
        valid = {a.dest for a in subparser._actions}
        mapped = {}
        for key, value in overrides.items():
            attr = key.replace("-", "_")
            if attr not in valid:
                raise ConfigError(f"unknown config key {key!r} for command {command!r}")
            mapped[attr] = value
        subparser.set_defaults(**mapped)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return args.func(args)
    except (ConfigError, io.SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MalformedRecord, InsufficientData, Separation, EmptyMonth) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PREPROCESSING
    except (NonFiniteDensity, NotPositiveDefinite) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFERENCE


if __name__ == "__main__":
    sys.exit(main())
