"""Command-line front end: ``fit``, ``select``, ``simulate`` and ``prior``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .design import CovariateSpec, Scale, check_propriety, ingest_csv, standardize
from .exceptions import ConfigError, DataError, EffectFusionError, NumericalError
from .gibbs import PosteriorDraws, SamplerConfig, iat_summary, run_chains
from .prior import (DEFAULT_G0_SHAPE, DEFAULT_R, HyperParams, concentration_check,
                    fusion_curve_table, simulate_prior)
from .select import selection_report
from .simstudy import RefitOptions, SimulationDesign, StudySetting, run_study

logger = logging.getLogger("effect_fusion")

SCHEMA = json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


def load_config(path: str | Path | None) -> dict:
    """Parse a TOML run configuration and check it against the bundled schema."""
    if path is None:
        return {}
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message already carries "(at line L, column C)"
        raise ConfigError(f"{path}: {exc}") from None
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.path) or "<top level>"
        raise ConfigError(f"{path}: {where}: {err.message}{_line_hint(text, err.path)}")
    cfg["_base"] = str(path.parent.resolve())
    return cfg


def _line_hint(text: str, key_path) -> str:
    keys = [k for k in key_path if isinstance(k, str)]
    if not keys:
        return ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(keys[-1]) and "=" in stripped:
            return f" (line {lineno})"
    return ""


def _seed(args, cfg: dict) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def _out_dir(args, cfg: dict, default: str) -> Path:
    out = Path(args.out or cfg.get("out") or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sampler_config(cfg: dict, seed: int) -> SamplerConfig:
    s = cfg.get("sampler", {})
    try:
        return SamplerConfig(n_burnin=s.get("n_burnin", 5000), n_iter=s.get("n_iter", 10000),
                             unrestricted_warm_start=s.get("warm_start"), seed=seed,
                             thinning=s.get("thinning", 1), M0=s.get("M0", 1e4),
                             s0=s.get("s0", 0.0), S0=s.get("S0", 0.0))
    except ValueError as exc:
        raise ConfigError(f"sampler: {exc}") from None


def _covariates(cfg: dict) -> tuple[tuple[CovariateSpec, ...], list[HyperParams]]:
    if "covariates" not in cfg:
        raise ConfigError("config needs at least one [[covariates]] entry")
    defaults = cfg.get("hyper", {})
    specs, hyper = [], []
    for entry in cfg["covariates"]:
        try:
            spec = CovariateSpec(entry["name"], tuple(str(v) for v in entry["levels"]),
                                 entry.get("scale", "nominal"),
                                 frozen_pairs=tuple(tuple(p) for p in entry.get("frozen_pairs", ())))
            G0_default = defaults.get("G0_nominal" if spec.scale is Scale.NOMINAL else "G0_ordinal")
            G0 = entry.get("G0", G0_default)
            hp = HyperParams.default_for(
                spec.scale, r=entry.get("r", defaults.get("r", DEFAULT_R)),
                g0=entry.get("g0", defaults.get("g0", DEFAULT_G0_SHAPE)),
                G0_lambda=entry.get("G0_lambda", defaults.get("G0_lambda")),
                **({} if G0 is None else {"G0": G0}))
        except ValueError as exc:
            raise ConfigError(f"covariate {entry.get('name')!r}: {exc}") from None
        specs.append(spec)
        hyper.append(hp)
    return tuple(specs), hyper


def _data_path(cfg: dict) -> Path:
    if "data" not in cfg:
        raise ConfigError("config needs a [data] table with path and response")
    path = Path(cfg["data"]["path"])
    return path if path.is_absolute() else Path(cfg["_base"]) / path


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    specs, hyper = _covariates(cfg)
    config = _sampler_config(cfg, seed)
    data_path = _data_path(cfg)
    response = cfg["data"]["response"]
    do_std = bool(args.standardize or cfg["data"].get("standardize", False))
    design, y = ingest_csv(data_path, response, specs)
    if do_std:
        y = standardize(y)
    out = _out_dir(args, cfg, "fit_out")
    report = check_propriety(design, [(h.g0, h.G0) for h in hyper], config.s0, config.S0, y=y)
    (out / "propriety.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if not report.ok and not args.force:
        failed = [k for k, v in report.conditions.items() if not v]
        raise DataError(f"posterior propriety conditions fail: {failed}; rerun with --force")
    n_chains = args.chains or cfg.get("sampler", {}).get("chains", 1)
    chains = run_chains(design, y, hyper, config, n_chains=n_chains,
                        max_workers=n_chains if args.chains else 1, force=True)
    fmt = cfg.get("sampler", {}).get("format", "npz")
    select_cfg = cfg.get("select", {})
    iat = []
    for draws in chains:
        draws.extra = {"data_path": str(data_path.resolve()), "response": response,
                       "standardize": do_std, "n_rows": design.n, "n_dropped": design.n_dropped,
                       "select": select_cfg}
        draws.save(out, fmt=fmt)
        iat.append({"chain": draws.chain, **iat_summary(draws)})
    (out / "iat.json").write_text(json.dumps(iat, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(chains)} chain(s) of {config.n_kept} draws to {out}")
    return 0


def cmd_select(args) -> int:
    draws_dir = Path(args.draws)
    sidecars = sorted(draws_dir.glob("draws_chain*.json"))
    if not sidecars:
        raise DataError(f"no draws_chain*.json sidecars in {draws_dir}")
    chains = [PosteriorDraws.load(p) for p in sidecars]
    hashes = {c.spec_hash for c in chains}
    if len(hashes) != 1:
        raise DataError("chains in this directory were fitted with different covariate specs")
    extra = chains[0].extra
    design = y = None
    if not args.no_refit and extra.get("data_path"):
        design, y = ingest_csv(extra["data_path"], extra["response"], chains[0].specs)
        if extra.get("standardize"):
            y = standardize(y)
    opts = extra.get("select", {})
    seed = args.seed if args.seed is not None else chains[0].config.seed
    report = selection_report(chains, design, y, B0=opts.get("B0", 1e4),
                              refit_iter=opts.get("refit_iter", 3000),
                              refit_burnin=opts.get("refit_burnin", 1000), seed=seed)
    out = Path(args.out) if args.out else draws_dir / "selection"
    report.write(out)
    for c in report.covariates:
        clusters = " ".join("{" + ",".join(c.levels[k] for k in cl) + "}"
                            for cl in c.partition.clusters())
        print(f"{c.name}: {clusters}{'  (excluded)' if c.excluded else ''}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    sim_cfg = cfg.get("simulate", {})
    try:
        sim = SimulationDesign(n=sim_cfg.get("n", 500), n_new=sim_cfg.get("n_new", 500),
                               n_replicates=sim_cfg.get("replicates", 10), seed=seed)
        settings = [StudySetting(**s) for s in sim_cfg.get("settings", [{"name": "default"}])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulate: {exc}") from None
    config = _sampler_config(cfg, seed)
    sel = cfg.get("select", {})
    refit = RefitOptions(B0=sel.get("B0", 1e4), n_iter=sel.get("refit_iter", 3000),
                         n_burnin=sel.get("refit_burnin", 1000))
    out = _out_dir(args, cfg, "study_out")
    report = run_study(sim, config, settings, refit, max_workers=args.replicates_parallel,
                       baselines=sim_cfg.get("baselines", True))
    report.write(out)
    meta = {"seed": seed, "sampler": asdict(config), "settings": [asdict(s) for s in settings],
            "replicates": sim.n_replicates, "n": sim.n, "n_new": sim.n_new}
    (out / "study.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for row in report.metrics_table():
        print(f"{row['setting']:>10} {row['covariate']:>4}  TPR={_fmt(row['TPR'])}  "
              f"TNR={_fmt(row['TNR'])}  excluded={row['n_excluded']}/{row['n_replicates']}")
    return 0


def _fmt(v) -> str:
    return "  -  " if v is None else f"{v:5.1f}"


def cmd_prior(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    p = cfg.get("prior", {})
    try:
        n_levels = p.get("n_levels", 3)
        spec = CovariateSpec("x", tuple(str(k) for k in range(n_levels)), p.get("scale", "nominal"))
        G0 = p.get("G0")
        hyper = HyperParams.default_for(spec.scale, r=p.get("r", DEFAULT_R),
                                        g0=p.get("g0", DEFAULT_G0_SHAPE),
                                        **({} if G0 is None else {"G0": G0}))
        lo, hi = p.get("theta_min", -1.5), p.get("theta_max", 1.5)
        if not hi > lo:
            raise ValueError("theta_max must exceed theta_min")
    except ValueError as exc:
        raise ConfigError(f"prior: {exc}") from None
    out = _out_dir(args, cfg, "prior_out")
    grid = np.linspace(lo, hi, p.get("n_grid", 301))
    table = fusion_curve_table(grid, hyper.g0, hyper.G0, hyper.r)
    with (out / "curve.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "prob_fusion"])
        w.writerows([repr(float(a)), repr(float(b))] for a, b in table)
    draws = simulate_prior(spec, hyper, p.get("n_draws", 10000), seed)
    with (out / "prior_draws.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["draw"] + [f"beta{k}" for k in range(1, spec.c + 1)])
        w.writerows([i] + [repr(float(v)) for v in row] for i, row in enumerate(draws.beta))
    summary = {"spec": spec.to_dict(), "hyper": hyper.to_dict(), "seed": seed,
               "n_draws": int(draws.beta.shape[0])}
    if spec.c >= 2:
        mass, reference, passes = concentration_check(draws.beta)
        summary.update(band_mass=mass, band_mass_reference=reference, concentrated=passes)
    (out / "prior_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote curve.csv ({len(grid)} rows) and prior_draws.csv to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="effect-fusion",
                                     description="Sparse modelling of categorical predictors by effect fusion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("fit", help="run the sampler on a CSV data set")
    common(p, config_required=True)
    p.add_argument("--chains", type=int, default=None, help="independent chains, run in parallel")
    p.add_argument("--force", action="store_true", help="sample even if propriety checks fail")
    p.add_argument("--standardize", action="store_true", help="centre and scale the response")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="select partitions and refit from saved draws")
    p.add_argument("draws", help="directory written by 'fit'")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--no-refit", action="store_true", help="skip the refit (no data access)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run the synthetic simulation study")
    common(p)
    p.add_argument("--replicates-parallel", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("prior", help="export the fusion-probability curve and prior draws")
    common(p)
    p.set_defaults(func=cmd_prior)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return exc.exit_code
    except EffectFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
