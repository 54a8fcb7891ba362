"""Command-line interface.

Every subcommand reads the experiment configuration and works inside its
output directory::

    gen-data   train.csv, test.csv
    train      model_<method>.jsonl
    prune      model_pruned.jsonl, kept_indices.txt
    eval       mse.csv
    mpc        closed_loop_<model>.csv
    report     report.txt (also printed)

Exit codes: 0 success, 2 configuration or input error, 3 numerical
failure, 4 infeasible QP.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ExperimentConfig, load_config
from .dynamics import generate_dataset, read_dataset_csv, write_dataset_csv
from .edmd_multistep import CondensedModel, fit_multistep, prune
from .edmd_onestep import OneStepModel, condense, fit_onestep, spectral_radius
from .errors import ConfigError, InfeasibleQPError, KoopmanError, ModelFormatError
from .evaluation import mse_report, read_mse_csv, write_mse_csv
from .io import load_model, save_model
from .mpc_loop import ClosedLoopRun, run_closed_loop, write_closed_loop_csv

log = logging.getLogger("mskoopman")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 2, 3, 4
MODEL_NAMES = ("onestep", "multistep", "pruned")
REGULATION_RADIUS = 0.05


def _out(cfg: ExperimentConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def _model_path(cfg, name) -> Path:
    return cfg.output_dir / f"model_{name}.jsonl"


def _train_data(cfg):
    return read_dataset_csv(cfg.output_dir / "train.csv", cfg.plant, cfg.train_sampling)


def _condensed(cfg, model, H=None) -> CondensedModel:
    if isinstance(model, OneStepModel):
        return condense(model, H or cfg.training.horizon)
    return model if H is None else model.truncated(H)


def cmd_gen_data(cfg, args) -> int:
    out = _out(cfg)
    for split, spec in (("train", cfg.train_sampling), ("test", cfg.test_sampling)):
        ds = generate_dataset(cfg.plant, spec, threads=args.threads)
        write_dataset_csv(ds, out / f"{split}.csv")
        print(f"wrote {out / f'{split}.csv'} ({ds.num_trajectories} trajectories, "
              f"seed {spec.seed})")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    method = args.method or cfg.training.method
    data = _train_data(cfg)
    dictionary = cfg.build_dictionary()
    t = cfg.training
    if method == "onestep":
        model = fit_onestep(data, dictionary, t.beta, t.onestep_pairs)
        rho = spectral_radius(model.A)
        model = replace(model, meta={"beta": t.beta, "pairs": t.onestep_pairs,
                                     "spectral_radius": rho})
        print(f"one-step model: N={model.N}, spectral radius {rho:.6g}")
    else:
        model = fit_multistep(data, dictionary, t.horizon, t.beta, t.tau, args.threads)
        model = replace(model, meta={"beta": t.beta, "tau": t.tau})
        print(f"multi-step model: H={model.H}, N={model.N}, "
              f"converged {int(model.converged.sum())}/{model.converged.size}")
    path = _model_path(cfg, method)
    save_model(model, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_prune(cfg, args) -> int:
    p = cfg.pruning
    eps = p.epsilon if args.epsilon is None else args.epsilon
    tau = p.tau if args.tau is None else args.tau
    retrain = p.retrain if args.retrain is None else args.retrain
    src = Path(args.model) if args.model else _model_path(cfg, "multistep")
    model = load_model(src)
    if not isinstance(model, CondensedModel) or model.provenance != "multistep":
        raise ModelFormatError(f"{src}: pruning needs a multi-step model")
    data = _train_data(cfg) if (tau > 0 or retrain) else None
    beta = cfg.training.beta
    if tau > 0:
        # the l1-regularised fit supplies the coefficients that are thresholded
        log.info("refitting %s with tau=%g before thresholding", src, tau)
        model = fit_multistep(data, model.dictionary, model.H, beta, tau, args.threads)
    pruned, dictionary = prune(model, eps, retrain, data, beta, 0.0, args.threads)
    pruned = replace(pruned, meta={"beta": beta, "epsilon": eps, "tau": tau,
                                   "retrain": retrain, "source": src.name})
    out = _model_path(cfg, "pruned")
    save_model(pruned, out)
    listing = cfg.output_dir / "kept_indices.txt"
    with open(listing, "w") as fh:
        fh.write(f"# epsilon={eps:g} tau={tau:g} retrain={retrain}\n")
        fh.write(f"# lifted_dimension {dictionary.N}\n")
        fh.write(f"# observables {dictionary.num_legendre}\n")
        for label in dictionary.column_labels():
            fh.write(label + "\n")
    print(f"kept {dictionary.num_legendre} of {len(dictionary.indices)} observables "
          f"(lifted dimension {model.N} -> {dictionary.N}); wrote {out}, {listing}")
    return EXIT_OK


def _available_models(cfg, names) -> List[str]:
    names = names or [n for n in MODEL_NAMES if _model_path(cfg, n).exists()]
    if not names:
        raise ConfigError(f"no model files in {cfg.output_dir}")
    return names


def cmd_eval(cfg, args) -> int:
    test = read_dataset_csv(cfg.output_dir / "test.csv", cfg.plant, cfg.test_sampling)
    models = {n: _condensed(cfg, load_model(_model_path(cfg, n)))
              for n in _available_models(cfg, args.models)}
    report = mse_report(models, test, test_seed=cfg.test_seed)
    path = cfg.output_dir / "mse.csv"
    write_mse_csv(report, path)
    for s in report.series:
        flag = " (overflowed)" if s.overflowed else ""
        print(f"{s.name:>10}: MSE(1)={s.values[0]:.4g} MSE({s.H})={s.values[-1]:.4g} "
              f"max/min={s.ratio_max_min():.4g}{flag}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_mpc(cfg, args) -> int:
    name = args.model
    model = load_model(_model_path(cfg, name))
    H = cfg.onestep_mpc_horizon if name == "onestep" else cfg.mpc.H
    mpc = replace(cfg.mpc, H=H)
    x0 = np.array(args.x0 if args.x0 is not None else cfg.x0, dtype=float)
    steps = cfg.sim_steps if args.steps is None else args.steps
    run = run_closed_loop(ClosedLoopRun(cfg.plant, _condensed(cfg, model, H), mpc, x0, steps,
                                        cfg.sampling.step_size))
    path = cfg.output_dir / f"closed_loop_{name}.csv"
    write_closed_loop_csv(run, path)
    hit = run.first_hitting_time(REGULATION_RADIUS)
    print(f"{name}: {run.steps_completed} steps, final state {run.states[-1]}, "
          f"||x||_inf < {REGULATION_RADIUS} first at t={hit}; wrote {path}")
    if run.infeasible_step is not None:
        print(f"QP infeasible at step {run.infeasible_step}: {run.certificate}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def build_report(out: Path) -> str:
    """Summary table; every number is copied verbatim from a CSV or listing."""
    lines = [f"Summary for {out}", ""]
    mse_path = out / "mse.csv"
    if mse_path.exists():
        cols = read_mse_csv(mse_path)
        names = [c for c in cols if c != "k"]
        ks = cols["k"]
        H = len(ks)
        picks = sorted({0, H // 4, H // 2, (3 * H) // 4, H - 1})
        lines.append("Open-loop MSE on held-out trajectories")
        lines.append("  " + "k".rjust(4) + "".join(n.rjust(26) for n in names))
        for r in picks:
            lines.append("  " + ks[r].rjust(4) + "".join(cols[n][r].rjust(26) for n in names))
        lines.append("")
    listing = out / "kept_indices.txt"
    if listing.exists():
        header = [l[2:].strip() for l in listing.read_text().splitlines() if l.startswith("# ")]
        lines.append("Pruning: " + "; ".join(header))
        lines.append("")
    for name in MODEL_NAMES:
        path = out / f"closed_loop_{name}.csv"
        if not path.exists():
            continue
        rows = _read_rows(path)
        head, body = rows[0], rows[1:]
        nx = sum(1 for h in head if h.startswith("x"))
        lines.append(f"Closed loop ({name}): {len(body) - 1} steps")
        lines.append(f"  final      t={body[-1][1]}  x=({', '.join(body[-1][2:2 + nx])})")
        hit = next((r for r in body if max(abs(float(v)) for v in r[2:2 + nx]) < REGULATION_RADIUS),
                   None)
        if hit is not None:
            lines.append(f"  first ||x||_inf < {REGULATION_RADIUS}  step={hit[0]}  t={hit[1]}  "
                         f"x=({', '.join(hit[2:2 + nx])})")
        else:
            lines.append(f"  never reached ||x||_inf < {REGULATION_RADIUS}")
        lines.append("")
    if len(lines) == 2:
        raise ConfigError(f"nothing to report in {out}")
    return "\n".join(lines)


def cmd_report(cfg, args) -> int:
    out = _out(cfg)
    text = build_report(out)
    (out / "report.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="config file or bundled name (vdp, duffing)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the training seed (test seed keeps its offset)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="mskoopman", parents=[common],
                                     description="Multi-step Koopman predictors and MPC.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="simulate training and test data")
    p = sub.add_parser("train", parents=[common], help="fit a model")
    p.add_argument("--method", choices=("onestep", "multistep"))
    p = sub.add_parser("prune", parents=[common], help="prune a multi-step model")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--tau", type=float, help="l1 weight of the fit being thresholded")
    p.add_argument("--model", help="model file (default: model_multistep.jsonl)")
    p.add_argument("--retrain", dest="retrain", action="store_true", default=None)
    p.add_argument("--no-retrain", dest="retrain", action="store_false")
    p = sub.add_parser("eval", parents=[common], help="open-loop MSE on the test set")
    p.add_argument("--models", nargs="+", choices=MODEL_NAMES)
    p = sub.add_parser("mpc", parents=[common], help="closed-loop simulation")
    p.add_argument("--model", choices=MODEL_NAMES, default="multistep")
    p.add_argument("--x0", type=float, nargs="+")
    p.add_argument("--steps", type=int)
    sub.add_parser("report", parents=[common], help="summarise CSV outputs")
    return parser


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "prune": cmd_prune,
            "eval": cmd_eval, "mpc": cmd_mpc, "report": cmd_report}


def main(argv: Optional[List[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    args.threads = max(1, getattr(args, "threads", 1))
    verbose = getattr(args, "verbose", 0)
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else
                        logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if not hasattr(args, "config"):
            raise ConfigError("--config is required")
        cfg = load_config(args.config)
        if hasattr(args, "seed"):
            cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](cfg, args)
    except InfeasibleQPError as exc:
        print(f"error: infeasible QP: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KoopmanError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def console() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console()
