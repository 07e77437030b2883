"""Command line front end.

Subcommands:
  simulate   one scheduling run, metrics row (+ optional per-TTI log)
  train      fit a beam predictor for one lookahead and save the checkpoint
  evaluate   beam selection loss tail curves for trained predictors
  analyze    dependence of the broadband beam on the paired reporter's feed
  all        full sweep: metrics, loss tails, dependence, figures

Report-producing commands render PNG figures next to the CSV files they
summarize unless --no-figures is given.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigError, ContractError, DomainError
from .scenario import ScenarioConfig


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file of scenario overrides")
    parser.add_argument("--seed", type=int, default=None, help="base RNG seed")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vslice",
        description="Sliced vehicular downlink simulator with learned beam lookahead.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario and report slice metrics")
    _add_common(p)
    p.add_argument("--mode", choices=["perfect", "inferred"], default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--sim-ttis", type=int, default=10_000)
    p.add_argument("--train-ttis", type=int, default=50_000,
                   help="trace length if an inferred run must train its own model")
    p.add_argument("--model", type=Path, default=None,
                   help="checkpoint to load instead of training (inferred mode)")
    p.add_argument("--per-tti", action="store_true",
                   help="also write a per-TTI allocation log")

    p = sub.add_parser("train", help="train a beam predictor checkpoint")
    _add_common(p)
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--train-ttis", type=int, default=50_000)
    p.add_argument("--epochs", type=int, default=6)

    p = sub.add_parser("evaluate", help="loss tail curves over lookahead horizons")
    _add_common(p)
    p.add_argument("--horizon", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--train-ttis", type=int, default=50_000)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--model", type=Path, default=None,
                   help="directory of model_h<N>.bin checkpoints to reuse")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("analyze", help="reporter/broadband dependence vs resolution")
    _add_common(p)
    p.add_argument("--train-ttis", type=int, default=50_000)
    p.add_argument("--bins", type=int, nargs="+", default=[4, 8, 16, 32, 64])
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("all", help="full sweep with figures")
    _add_common(p)
    p.add_argument("--mode", choices=["perfect", "inferred", "both"], default="both")
    p.add_argument("--epsilon", type=float, nargs="+",
                   default=[0.1, 0.01, 0.001, 0.0001])
    p.add_argument("--horizon", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--seeds", type=int, nargs="+", default=None,
                   help="explicit seed list (overrides --seed)")
    p.add_argument("--sim-ttis", type=int, default=10_000)
    p.add_argument("--train-ttis", type=int, default=50_000)
    p.add_argument("--sparse-only", action="store_true")
    p.add_argument("--per-tti", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    return parser


def load_config(args) -> ScenarioConfig:
    if args.config is not None:
        config = ScenarioConfig.from_file(args.config)
    else:
        config = ScenarioConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None) not in (None, "both"):
        overrides["mode"] = args.mode
    if getattr(args, "epsilon", None) is not None and args.command == "simulate":
        overrides["epsilon"] = args.epsilon
    if getattr(args, "horizon", None) is not None and args.command in ("simulate", "train"):
        overrides["horizon"] = args.horizon
    return config.override(**overrides) if overrides else config


def _cmd_simulate(args) -> int:
    from .analysis import aggregate
    from .harness import (ExperimentPlan, RunResult, train_model_for, write_outputs)
    from .infer import MlpModel, MlpPredictor, generate_trace
    from .sim import Engine

    config = load_config(args)
    predictor = None
    if config.mode == "inferred":
        if args.model is not None:
            model = MlpModel.load(args.model)
        else:
            trace = generate_trace(config.override(mode="perfect"), args.train_ttis)
            model = train_model_for(config, config.horizon, trace)
        predictor = MlpPredictor(model, config.num_rb)
    engine = Engine(config, predictor=predictor, collect_records=args.per_tti)
    engine.run(args.sim_ttis)
    summary = aggregate(engine.tracker, engine.ledger, config, engine.vehicles)
    density = f"u{config.num_urllc}e{config.num_embb}"
    plan = ExperimentPlan(base=config, out_dir=args.out, render_figures=False)
    results = {
        "plan": plan,
        "metrics": [RunResult(
            grid_id=f"{density}-{config.mode}-eps{config.epsilon:g}",
            seed=config.seed, mode=config.mode, epsilon=config.epsilon,
            density=density, summary=summary)],
        "loss_samples": {}, "exact_fractions": {}, "mi_rows": [],
        "command": "simulate",
    }
    written = write_outputs(results, engine.records if args.per_tti else None)
    for name in ("metrics", "per_tti"):
        if name in written:
            print(written[name])
    print(f"urllc_violation={summary.urllc_violation:.6g} "
          f"mean_embb_rate_bps={summary.mean_embb_rate_bps:.6g}")
    return 0


def _cmd_train(args) -> int:
    from .harness import train_model_for
    from .infer import generate_trace

    config = load_config(args)
    trace = generate_trace(config.override(mode="perfect"), args.train_ttis)
    model = train_model_for(config, config.horizon, trace, epochs=args.epochs)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"model_h{config.horizon}.bin"
    model.save(path)
    print(path)
    return 0


def _cmd_evaluate(args) -> int:
    from .analysis import ccdf
    from .harness import atomic_write_text, _csv_text, LOSS_CCDF_COLUMNS, train_model_for
    from .infer import MlpModel, evaluate_horizons, generate_trace

    config = load_config(args)
    trace = generate_trace(config.override(mode="perfect"), args.train_ttis)
    models = {}
    for h in args.horizon:
        if args.model is not None:
            models[h] = MlpModel.load(args.model / f"model_h{h}.bin")
        else:
            models[h] = train_model_for(config, h, trace, epochs=args.epochs)
    evaluated = evaluate_horizons(models, trace, args.horizon)
    rows = []
    for h in sorted(evaluated):
        curve = ccdf(evaluated[h]["losses"])
        for value, prob in zip(curve.values, curve.probs):
            rows.append([h, value, prob])
        print(f"horizon {h}: exact_fraction={evaluated[h]['exact_fraction']:.4f} "
              f"median_loss={curve.quantile(0.5):.6g}")
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "loss_ccdf.csv"
    atomic_write_text(path, _csv_text(LOSS_CCDF_COLUMNS, rows))
    print(path)
    if not args.no_figures:
        from . import plots

        plots.render_all(args.out)
    return 0


def _cmd_analyze(args) -> int:
    from .harness import _csv_text, _dependence_rows, atomic_write_text, MI_CCA_COLUMNS
    from .infer import generate_trace

    config = load_config(args)
    trace = generate_trace(config.override(mode="perfect"), args.train_ttis)
    pairs = [(trace.features[:, pair, :], trace.features[:, emb, :])
             for pair, emb in zip(trace.pair_ids, trace.embb_ids)]
    rows = _dependence_rows(pairs, args.bins)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "mi_cca.csv"
    atomic_write_text(path, _csv_text(MI_CCA_COLUMNS, rows))
    for bins, mi, rho in rows:
        print(f"bins={bins} mi_nats={mi:.4f} canonical_corr={rho:.4f}")
    print(path)
    if not args.no_figures:
        from . import plots

        plots.render_all(args.out)
    return 0


def _cmd_all(args) -> int:
    from .harness import DENSE, SPARSE, ExperimentPlan, run, write_outputs

    config = load_config(args)
    modes = ["perfect", "inferred"] if args.mode == "both" else [args.mode]
    seeds = args.seeds if args.seeds else [config.seed, config.seed + 1, config.seed + 2]
    densities = [SPARSE] if args.sparse_only else [SPARSE, DENSE]
    plan = ExperimentPlan(
        base=config, out_dir=args.out, epsilons=args.epsilon, densities=densities,
        modes=modes, seeds=seeds, horizons=args.horizon,
        sim_ttis=args.sim_ttis, train_ttis=args.train_ttis,
        render_figures=not args.no_figures, per_tti=args.per_tti,
    )
    results = run(plan)
    results["command"] = "all"
    written = write_outputs(results, results.get("per_tti_records"))
    for name in sorted(written):
        print(written[name])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "analyze": _cmd_analyze,
        "all": _cmd_all,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, DomainError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
