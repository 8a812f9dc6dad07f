"""Command-line entry point: ``pvfcure {fit,compare,simulate,generate}``.

Options may also come from a flat ``key = value`` config file passed with
``--config``; keys match the long flag names (``burnin``, ``seed``, ...) and
explicit flags take precedence. Exit status is 0 on success, 2 for invalid
input or configuration and 3 for numerical failures; failures also print a
JSON error document on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .estimators import cpo, survival_curve_estimate
from .inference import ObservedData, PriorSpec
from .model import ModelKind
from .sampler import InitializationError, SamplerConfig, SamplerConfigurationError, make_rng, run_chain
from .simulation import ScenarioSpec, generate_dataset, run_study

log = logging.getLogger("pvfcure")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
MAX_PROFILES = 16


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    data_path: Optional[str] = None
    model: str = "both"
    iters: Optional[int] = None
    burnin: Optional[int] = None
    thin: Optional[int] = None
    seed: int = 0
    priors: dict = field(default_factory=dict)
    scenario: Optional[dict] = None
    output_dir: str = "out"
    grid: Optional[str] = None
    time_col: str = "time"
    event_col: str = "event"
    covariates: Optional[list] = None
    categorical: list = field(default_factory=list)
    workers: int = 1
    level: float = 0.95
    replicate: int = 0

    def __post_init__(self):
        if self.command in ("fit", "compare") and not self.data_path:
            raise ConfigError(f"'{self.command}' requires --data")
        if self.command in ("simulate", "generate") and not self.scenario:
            raise ConfigError(f"'{self.command}' requires --scenario")
        if self.model not in ("pvfcr", "cr", "both"):
            raise ConfigError("--model must be one of pvfcr, cr, both")
        if not 0 < self.level < 1:
            raise ConfigError("--level must lie in (0, 1)")

    def kinds(self) -> list[ModelKind]:
        if self.command == "compare" or self.model == "both":
            return [ModelKind.PVFCR, ModelKind.CR]
        return [ModelKind.parse(self.model)]

    def sampler_config(self, kind: ModelKind, seed: Optional[int] = None) -> SamplerConfig:
        base = SamplerConfig.standard(kind)
        return SamplerConfig(
            self.iters if self.iters is not None else base.total_iterations,
            self.burnin if self.burnin is not None else base.burn_in,
            self.thin if self.thin is not None else base.thin,
            seed=self.seed if seed is None else seed,
        )

    def prior_spec(self) -> PriorSpec:
        return PriorSpec(**self.priors)

    def scenario_spec(self) -> ScenarioSpec:
        s = dict(self.scenario)
        return ScenarioSpec(gamma=float(s["gamma"]), sigma2=float(s["sigma2"]), m=int(s["m"]),
                            B=int(s.get("B", 1)), seed=self.seed)

    def hash(self) -> str:
        """Hash of the settings that affect results (not the output directory or worker count)."""
        return io.config_hash({k: v for k, v in asdict(self).items() if k not in ("output_dir", "workers")})


# -- parsing helpers ----------------------------------------------------------------


def parse_scenario(text: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise ConfigError(f"bad scenario entry {part!r}; expected key=value")
        k, v = (x.strip() for x in part.split("=", 1))
        if k not in ("gamma", "sigma2", "m", "B"):
            raise ConfigError(f"unknown scenario key {k!r}")
        out[k] = v
    missing = {"gamma", "sigma2", "m"} - out.keys()
    if missing:
        raise ConfigError(f"scenario missing {', '.join(sorted(missing))}")
    return out


def parse_priors(text: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        k, _, v = part.partition("=")
        k = k.strip()
        if k in ("beta_variance", "alpha_variance"):
            out[k] = float(v)
        elif k in ("eta_gamma", "lambda_gamma", "sigma2_gamma"):
            shape, _, rate = v.partition(":")
            out[k] = (float(shape), float(rate))
        else:
            raise ConfigError(f"unknown prior key {k!r}")
    return out


def parse_grid(text: Optional[str], data: ObservedData) -> np.ndarray:
    if not text:
        return np.linspace(0.0, float(data.times.max()), 50)
    try:
        lo, hi, n = text.split(":")
        grid = np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; expected min:max:points") from None
    if grid.size < 1 or grid[0] < 0 or (grid.size > 1 and grid[-1] <= grid[0]):
        raise ConfigError("grid must be increasing and nonnegative")
    return grid


def read_config_file(path) -> dict:
    """Flat ``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = (x.strip() for x in line.split(sep, 1))
        out[k.lstrip("-").replace("-", "_")] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--data", help="input CSV with time and event columns")
    common.add_argument("--model", choices=["pvfcr", "cr", "both"], default="both")
    common.add_argument("--iters", type=int, help="total iterations (default: 40000 for pvfcr, 30000 for cr)")
    common.add_argument("--burnin", type=int)
    common.add_argument("--thin", type=int)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--scenario", help="gamma=..,sigma2=..,m=..,B=..")
    common.add_argument("--grid", help="survival grid min:max:points")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--prior", help="e.g. beta_variance=100,eta_gamma=1:1")
    common.add_argument("--time-col", default="time")
    common.add_argument("--event-col", default="event")
    common.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    common.add_argument("--categorical", help="comma-separated columns to expand into dummies")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--level", type=float, default=0.95, help="HPD level")
    common.add_argument("--replicate", type=int, default=0, help="replicate index for 'generate'")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pvfcure", description="Bayesian PVF frailty cure rate models for right-censored data.")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = {
        "fit": sub.add_parser("fit", parents=[common], help="fit one or both models to a dataset"),
        "compare": sub.add_parser("compare", parents=[common], help="fit both models and compare their CPO"),
        "simulate": sub.add_parser("simulate", parents=[common], help="run the simulation study for one scenario"),
        "generate": sub.add_parser("generate", parents=[common], help="write one simulated dataset as CSV"),
    }
    return parser


_INT_KEYS = {"iters", "burnin", "thin", "seed", "workers", "replicate"}


def resolve_config(argv: Sequence[str]) -> tuple[RunConfig, bool]:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        file_values = read_config_file(args.config)
        sub = parser.subcommands[args.command]
        known = {a.dest for a in sub._actions} - {"help", "config"}
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        typed = {k: (int(v) if k in _INT_KEYS else float(v) if k == "level" else v) for k, v in file_values.items()}
        sub.set_defaults(**typed)
        args = parser.parse_args(argv)
    split = lambda s: [c.strip() for c in s.split(",") if c.strip()] if s else None  # noqa: E731
    cfg = RunConfig(
        command=args.command,
        data_path=args.data,
        model=args.model,
        iters=args.iters,
        burnin=args.burnin,
        thin=args.thin,
        seed=args.seed,
        priors=parse_priors(args.prior) if args.prior else {},
        scenario=parse_scenario(args.scenario) if args.scenario else None,
        output_dir=args.out,
        grid=args.grid,
        time_col=args.time_col,
        event_col=args.event_col,
        covariates=split(args.covariates),
        categorical=split(args.categorical) or [],
        workers=args.workers,
        level=args.level,
        replicate=args.replicate,
    )
    return cfg, bool(args.verbose)


# -- commands --------------------------------------------------------------------------


def _profiles(data: ObservedData) -> list[np.ndarray]:
    rows = np.unique(data.covariates, axis=0)
    if rows.shape[0] <= MAX_PROFILES:
        return list(rows)
    base = np.zeros(data.n_beta)
    base[0] = 1.0
    return [base]


def _fit_models(cfg: RunConfig, out: Path) -> dict:
    data = io.load_dataset(cfg.data_path, cfg.time_col, cfg.event_col, cfg.covariates, cfg.categorical)
    grid = parse_grid(cfg.grid, data)
    profiles = _profiles(data)
    prior = cfg.prior_spec()
    meta = {"config_hash": cfg.hash(), "seed": cfg.seed}
    results = {}
    for j, kind in enumerate((ModelKind.PVFCR, ModelKind.CR)):
        if kind not in cfg.kinds():
            continue
        sc = cfg.sampler_config(kind)
        chain = run_chain(data, prior, kind, sc, rng=make_rng(cfg.seed, j))
        report = cpo(chain, data)
        summary = io.fit_summary(chain, data, report, profiles, meta, cfg.level)
        summary["sampler"] = {"total_iterations": sc.total_iterations, "burn_in": sc.burn_in, "thin": sc.thin,
                              "adapt_interval": sc.adapt_interval}
        io.write_json(summary, out / f"summary_{kind.value}.json")
        io.write_chain_csv(chain, out / f"chain_{kind.value}.csv", meta)
        curves = [(io.profile_id(x), survival_curve_estimate(chain, x, grid)) for x in profiles]
        io.write_survival_csv(curves, out / f"survival_{kind.value}.csv", meta)
        log.info("%s: acceptance %.3f, CPO %.3f", kind.value, chain.acceptance_rate, report.total_log)
        results[kind] = summary
    return results


def cmd_fit(cfg: RunConfig, out: Path) -> None:
    _fit_models(cfg, out)


def cmd_compare(cfg: RunConfig, out: Path) -> None:
    res = _fit_models(cfg, out)
    a, b = res[ModelKind.PVFCR]["cpo"]["total_log"], res[ModelKind.CR]["cpo"]["total_log"]
    doc = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "cpo": {"pvfcr": a, "cr": b},
        "cpo_diff": a - b,
        "preferred": "pvfcr" if a > b else "cr",
        "summaries": {"pvfcr": "summary_pvfcr.json", "cr": "summary_cr.json"},
    }
    io.write_json(doc, out / "compare.json")
    print(json.dumps({"cpo_pvfcr": a, "cpo_cr": b, "cpo_diff": a - b}))


def cmd_simulate(cfg: RunConfig, out: Path) -> None:
    s = cfg.scenario_spec()
    configs = {k: cfg.sampler_config(k) for k in ModelKind}
    result = run_study(s, configs, cfg.prior_spec(), workers=cfg.workers)
    meta = {"config_hash": cfg.hash(), "seed": cfg.seed}
    io.write_study(result, out, meta)
    io.write_json({**meta, "scenario_id": s.scenario_id, "cpo_diff_mean": result.cpo_diff_mean,
                   "cpo_diff_sd": result.cpo_diff_sd, "n_ok": len(result.replicate_log),
                   "failures": result.failures, "table": result.table,
                   "mean_censored_fraction": float(np.mean([r["censored_fraction"] for r in result.replicate_log]))},
                  out / "study.json")


def cmd_generate(cfg: RunConfig, out: Path) -> None:
    s = cfg.scenario_spec()
    data, latent = generate_dataset(s, cfg.replicate)
    io.write_dataset(data, out / "data.csv")
    with open(out / "latent.csv", "w") as fh:
        fh.write(f"# config_hash={cfg.hash()} seed={cfg.seed}\n")
        fh.write("u,cured,event_time,censor_time\n")
        for row in zip(latent.u, latent.cured, latent.event_times, latent.censor_times):
            fh.write(f"{row[0]!r},{int(row[1])},{row[2]!r},{row[3]!r}\n")


COMMANDS = {"fit": cmd_fit, "compare": cmd_compare, "simulate": cmd_simulate, "generate": cmd_generate}


def _fail(code: int, exc: BaseException, out: Optional[Path]) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    if out is not None and out.is_dir():
        io.write_json(doc, out / "error.json")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = None
    try:
        cfg, verbose = resolve_config(argv)
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[cfg.command](cfg, out)
    except SystemExit as exc:  # argparse: --help or a usage error
        if not exc.code:
            return EXIT_OK
        return _fail(EXIT_VALIDATION, ConfigError("invalid command line; see usage above"), None)
    except (ConfigError, io.DataValidationError, FileNotFoundError, KeyError) as exc:
        return _fail(EXIT_VALIDATION, exc, out)
    except (InitializationError, SamplerConfigurationError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        return _fail(EXIT_NUMERICAL, exc, out)
    except ValueError as exc:
        return _fail(EXIT_VALIDATION, exc, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
