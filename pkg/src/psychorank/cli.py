"""
Command-line entry point.

Every run writes ``manifest.json`` (the fully resolved configuration)
before doing any work, then the artifacts of its subcommand. JSON output
rounds floats to 9 significant digits and CSV tables use shortest
round-trip floats; identical inputs give byte-identical files.

Exit codes: 0 success, 2 input/configuration error, 3 non-convergence,
4 final model has a Heywood case.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .crm import icc_table
from .estimator import EstimationError, EstimatorOptions, fit_ml
from .fit_indices import baseline_fit, fit_indices
from .ingest import IngestConfig, IngestError, load_leaderboard, to_logit, write_leaderboard
from .model import ModelSpec, ParamSet, SingularCovarianceError, SpecError
from .modsearch import GreedyConfig, greedy_improve
from .ranking import default_trends, emit_comparison, rank_compare, round_floats
from .scoring import score_table
from .simulator import GenConfig, simulate_crm, v1_truth

log = logging.getLogger("psychorank")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGENCE, EXIT_HEYWOOD = 0, 2, 3, 4
COMMANDS = ("fit", "greedy", "score", "rank", "simulate", "icc", "report")


@dataclass
class RunConfig:
    """Resolved settings for one invocation (echoed to the manifest)."""

    command: str = "fit"
    input: str | None = None
    out: str = "out"
    ingest: dict = field(default_factory=lambda: IngestConfig().to_dict())
    epsilon: float = 1e-3
    cov_divisor: str = "M"
    model: dict | None = None
    estimator: dict = field(default_factory=lambda: EstimatorOptions().to_dict())
    greedy: dict = field(default_factory=lambda: asdict(GreedyConfig()))
    seed: int = 0
    quad_order: int = 61
    simulate: dict = field(default_factory=lambda: {"n_models": 2000, "preset": "v1", "residual": "normal"})

    def to_dict(self):
        d = asdict(self)
        d["version"] = __version__
        return d


class InputError(Exception):
    pass


def _write_json(path, obj):
    Path(path).write_text(json.dumps(round_floats(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_normalize(items):
    out = {}
    for item in items or []:
        name, sep, count = item.rpartition(":")
        if not sep or not name:
            raise InputError(f"--normalize expects name:options_count, got {item!r}")
        try:
            out[name] = int(count)
        except ValueError:
            raise InputError(f"options_count must be an integer in {item!r}") from None
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="psychorank", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input", help="leaderboard table (comma or tab delimited)")
        p.add_argument("--config", help="JSON run configuration; flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--epsilon", type=float, help="logit clamping margin")
        p.add_argument("--normalize", action="append", metavar="NAME:OPTIONS",
                       help="anti-guessing rescale for a parcel (repeatable)")
        p.add_argument("--max-iter", type=int, dest="max_iter", help="greedy iteration cap")
        p.add_argument("--stop-on", choices=["acceptable", "aic", "never"], dest="stop_on")
        p.add_argument("--se", choices=["observed", "sandwich"])
        p.add_argument("--chi2-n", choices=["M", "M-1"], dest="chi2_n")
        p.add_argument("--seed", type=int)
        p.add_argument("--quad-order", type=int, dest="quad_order")
        if name == "simulate":
            p.add_argument("--n-models", type=int, dest="n_models")
            p.add_argument("--residual", choices=["normal", "logistic", "student_t"])
    return parser


def resolve_config(args):
    cfg = RunConfig(command=args.command)
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        for key, val in raw.items():
            if not hasattr(cfg, key) or key == "command":
                raise InputError(f"unknown config key {key!r}")
            cur = getattr(cfg, key)
            setattr(cfg, key, {**cur, **val} if isinstance(cur, dict) and isinstance(val, dict) else val)
    if args.input is not None:
        cfg.input = args.input
    if args.out is not None:
        cfg.out = args.out
    if args.epsilon is not None:
        cfg.epsilon = args.epsilon
    if args.normalize:
        cfg.ingest["options_count"] = {**cfg.ingest.get("options_count", {}), **_parse_normalize(args.normalize)}
    if args.max_iter is not None:
        cfg.greedy["max_iter"] = args.max_iter
    if args.stop_on is not None:
        cfg.greedy["stop_on"] = args.stop_on
    if args.se is not None:
        cfg.estimator["se_method"] = args.se
    if args.chi2_n is not None:
        cfg.estimator["n_multiplier"] = args.chi2_n
    if args.seed is not None:
        cfg.seed = args.seed
    if args.quad_order is not None:
        cfg.quad_order = args.quad_order
    if args.command == "simulate":
        if args.n_models is not None:
            cfg.simulate["n_models"] = args.n_models
        if args.residual is not None:
            cfg.simulate["residual"] = args.residual
    return cfg


def _load(cfg):
    if not cfg.input:
        raise InputError("--input is required")
    data = load_leaderboard(cfg.input, IngestConfig.from_dict(cfg.ingest))
    ddof = {"M": 0, "M-1": 1}.get(cfg.cov_divisor)
    if ddof is None:
        raise InputError("cov_divisor must be 'M' or 'M-1'")
    return data, to_logit(data, cfg.epsilon, ddof=ddof)


def _spec(cfg, logits):
    if cfg.model is None:
        return ModelSpec.one_factor(logits.n_vars)
    return ModelSpec.from_dict(cfg.model, logits.parcel_ids)


def _final_status(fit):
    if not fit.converged:
        return EXIT_NONCONVERGENCE
    if fit.heywood:
        return EXIT_HEYWOOD
    return EXIT_OK


def _fit_summary(fit, baseline, logits):
    out = fit.summary()
    out["baseline"] = {"T": baseline.T, "df": baseline.df, "T_scaled": baseline.T_scaled,
                       "scaling_c": baseline.scaling_c}
    out["indices"] = {v: fit_indices(fit, baseline, v).to_dict() for v in ("naive", "scaled")
                      if v == "naive" or np.isfinite(fit.T_scaled)}
    out["data"] = {"n_models": logits.n_obs, "parcels": logits.parcel_ids, "clamp_count": logits.clamp_count,
                   "epsilon": logits.epsilon}
    return out


def run_pipeline(cfg):
    """Execute one command; returns the exit code."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", cfg.to_dict())
    cmd = cfg.command

    if cmd == "simulate":
        sim = cfg.simulate
        if sim.get("preset", "v1") == "v1":
            truth = v1_truth()
        else:
            truth = ParamSet.from_dict(sim["params"])
        data, theta = simulate_crm(GenConfig(int(sim["n_models"]), truth, cfg.seed,
                                             residual=sim.get("residual", "normal")))
        write_leaderboard(out / "leaderboard.csv", data)
        _write_json(out / "truth.json", {"params": truth.to_dict(), "parcels": data.parcel_ids,
                                         "seed": cfg.seed, "theta": theta.tolist()})
        return EXIT_OK

    data, logits = _load(cfg)
    opts = EstimatorOptions(**cfg.estimator)
    spec = _spec(cfg, logits)
    baseline = baseline_fit(logits, opts)

    if cmd in ("greedy", "report"):
        trace = greedy_improve(logits, spec, GreedyConfig(**cfg.greedy), opts)
        _write_json(out / "greedy_trace.json", trace.to_dict())
        fit = trace.final_fit
    else:
        fit = fit_ml(logits, spec, opts)
    _write_json(out / "fit_summary.json", _fit_summary(fit, baseline, logits))
    status = _final_status(fit)
    if not fit.converged:
        return status

    if cmd == "icc":
        grid, curves = icc_table(fit, quad_order=cfg.quad_order)
        rows = ["theta," + ",".join(logits.parcel_ids)]
        rows += [",".join(repr(float(v)) for v in (g, *c)) for g, c in zip(grid, curves)]
        (out / "icc.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    if cmd in ("score", "rank", "report"):
        scores = score_table(fit, logits, data)
        scores.write_csv(out / "scores.csv")
        if cmd in ("rank", "report"):
            emit_comparison(data, scores, default_trends(data, scores), out)
            _write_json(out / "ranking.json", rank_compare(scores.benchmark_average, scores.theta,
                                                           scores.se_theta).to_dict())
    return status


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return run_pipeline(cfg)
    except (InputError, IngestError, SpecError, SingularCovarianceError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
