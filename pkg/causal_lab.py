#!/usr/bin/env python3
"""
Causal Swap Lab command line.

    python causal_lab.py generate --dataset pendulum --n 1000 --seed 7 --out data/
    python causal_lab.py train --data data/ --out run/ [--config train.json]
    python causal_lab.py evaluate --model run/model.json --data data/ --out run/
    python causal_lab.py adequacy --config study.json --out study/

Config files are flat JSON objects; the keys each command accepts are listed
in its --help. Flags override file values. Exit codes: 0 success, 2 input or
config error, 3 numeric failure.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List

from tqdm import tqdm

from database import RunLedger
from datagen import (DEFAULT_NOISE_FRACTION, DEFAULT_NUISANCE_DIMS, DEFAULT_OBSERVATION_NOISE,
                     CounterexampleParams, gaussian_counterexample, generate_bundle, graph_variants,
                     split_seed)
from errors import ConfigError, InvalidInputError, LabError, NumericError, TrainingDivergedError
from evaluation import EvalConfig, OracleModel, adequacy_study, evaluate_model
from file_utils import (MODEL_FILE, REPORT_FILE, TRAIN_LOG_FILE, ensure_output_dir, load_bundle, read_config,
                        read_json, save_adequacy, save_bundle, save_counterexample, save_train_log, write_json)
from graph_core import binarize, graph_rubrics
from model import LOG_COLUMNS, LOSS_TERMS, TrainConfig, model_from_json, model_to_json, train

logger = logging.getLogger("causal_lab")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

DATASETS = ("pendulum", "flow", "counterexample")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
EVAL_KEYS = tuple(f.name for f in fields(EvalConfig))

COMMAND_KEYS = {
    "generate": ("dataset", "n", "seed", "m_u", "noise_sd", "noise_fraction", "rho", "literal"),
    "train": TRAIN_KEYS,
    "evaluate": EVAL_KEYS + ("oracle",),
    "adequacy": TRAIN_KEYS + EVAL_KEYS + ("dataset", "n", "m_u", "noise_sd", "noise_fraction",
                                          "variants", "seeds"),
}

GENERATE_DEFAULTS = {
    "dataset": "pendulum",
    "n": 1000,
    "seed": 0,
    "m_u": DEFAULT_NUISANCE_DIMS,
    "noise_sd": DEFAULT_OBSERVATION_NOISE,
    "noise_fraction": DEFAULT_NOISE_FRACTION,
    "rho": 0.9,
    "literal": False,
}

ADEQUACY_DEFAULTS = {
    "dataset": "pendulum",
    "n": 1000,
    "m_u": DEFAULT_NUISANCE_DIMS,
    "noise_sd": DEFAULT_OBSERVATION_NOISE,
    "noise_fraction": DEFAULT_NOISE_FRACTION,
    "variants": 14,
    "seeds": 3,
}


@dataclass
class ExperimentConfig:
    command: str
    out: str
    values: Dict[str, Any] = field(default_factory=dict)

    def subset(self, keys):
        return {k: v for k, v in self.values.items() if k in keys}

    def get(self, key, default=None):
        return self.values.get(key, default)


def build_config(command, file_values, overrides, out) -> ExperimentConfig:
    """Merge file values and flag overrides; reject keys the command does not know"""
    allowed = COMMAND_KEYS[command]
    unknown = sorted(set(file_values) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown config keys for '{command}': {', '.join(unknown)}")
    values = dict(file_values)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(command, out, values)


def _print_banner(title):
    print(f"🚀 {title}")
    print("=" * 40)


def _train_config(config: ExperimentConfig) -> TrainConfig:
    return TrainConfig.from_dict(config.subset(TRAIN_KEYS))


def _eval_config(config: ExperimentConfig) -> EvalConfig:
    try:
        return EvalConfig(**config.subset(EVAL_KEYS)).validate()
    except TypeError as e:
        raise ConfigError(str(e)) from e


def cmd_generate(config: ExperimentConfig):
    values = dict(GENERATE_DEFAULTS, **config.values)
    dataset = values["dataset"]
    if dataset not in DATASETS:
        raise InvalidInputError(f"Unknown dataset '{dataset}'. Choose from {', '.join(DATASETS)}")
    n, seed = int(values["n"]), int(values["seed"])
    ensure_output_dir(config.out)

    if dataset == "counterexample":
        params = CounterexampleParams(rho=float(values["rho"]))
        bundle = gaussian_counterexample(params, n, split_seed(seed)["data"], literal=bool(values["literal"]))
        ks = save_counterexample(bundle, config.out, n, seed)
        print(f"✅ Counterexample written to {config.out} (n={n}, rho={params.rho}, literal={bundle.literal})")
        print(f"📊 {'column':<8} {'KS':>8} {'critical':>9} {'p':>8}")
        for row in ks:
            mark = "✅" if row["passes"] else "⚠️"
            print(f"{mark} {row['column']:<8} {row['ks_statistic']:>8.4f} {row['critical_value']:>9.4f} "
                  f"{row['p_value']:>8.4f}")
        return {"max_ks": max(r["ks_statistic"] for r in ks)}

    bundle = generate_bundle(dataset, n, seed, int(values["m_u"]), float(values["noise_sd"]),
                             float(values["noise_fraction"]))
    save_bundle(bundle, config.out)
    print(f"✅ {dataset}: n={bundle.n}, factors={bundle.k} ({', '.join(bundle.factor_names)}), "
          f"edges={bundle.truth.n_edges}, m={bundle.m} -> {config.out}")
    return {"n": bundle.n, "edges": bundle.truth.n_edges}


def _print_breakdown(row):
    parts = [f"{name}={row[name]:.4g}" for name in LOSS_TERMS + ("total",)]
    print("📊 " + " ".join(parts))


def cmd_train(config: ExperimentConfig, data_dir, quiet=False):
    train_config = _train_config(config)
    bundle = load_bundle(data_dir)
    ensure_output_dir(config.out)
    log_path = os.path.join(config.out, TRAIN_LOG_FILE)
    mode = "semi-supervised" if train_config.label_fraction > 0 else "no-label"
    print(f"📦 {bundle.name}: n={bundle.n}, m={bundle.m}, {mode}, cdl={train_config.cdl_mode}, "
          f"steps={train_config.steps}")

    with tqdm(total=train_config.steps, desc="train", disable=quiet, file=sys.stderr) as bar:
        def progress(step, breakdown):
            bar.update(1)
            if step % 100 == 0:
                bar.set_postfix(total=f"{float(breakdown.total):.4f}")

        try:
            result = train(bundle, train_config, progress=progress)
        except TrainingDivergedError as e:
            save_train_log(e.log, log_path, LOG_COLUMNS)
            print(f"⚠️  Partial training log kept at {log_path} ({len(e.log)} steps)")
            raise

    save_train_log(result.log, log_path, LOG_COLUMNS)
    write_json(os.path.join(config.out, MODEL_FILE), model_to_json(result.model))
    rubrics = graph_rubrics(binarize(result.model.adjacency(), train_config.tau), bundle.truth)
    print(f"✅ Trained {result.steps_completed} steps -> {config.out}")
    if result.log:
        _print_breakdown(result.log[-1])
    print(f"📊 graph: TPR={rubrics.tpr:.3f} FDR={rubrics.fdr:.3f} SHD={rubrics.shd}")
    metrics = dict(rubrics.as_dict())
    if result.log:
        metrics["final_total"] = result.log[-1]["total"]
    return metrics


def _print_report(report):
    header = ("mic", "tic", "pos_mic", "pos_tic", "neg_mic", "neg_tic", "f1_mic", "f1_tic", "tpr", "fdr", "shd")
    row = report.row()
    print("📊 " + " ".join(f"{h:>8}" for h in header))
    print("   " + " ".join(f"{row[h]:>8.3f}" if h != "shd" else f"{row[h]:>8d}" for h in header))


def cmd_evaluate(config: ExperimentConfig, data_dir, model_path=None):
    eval_config = _eval_config(config)
    bundle = load_bundle(data_dir)
    if config.get("oracle"):
        model = OracleModel(bundle)
        source = "oracle"
    else:
        if not model_path:
            raise ConfigError("evaluate needs --model (or oracle=true in the config)")
        model = model_from_json(read_json(model_path))
        source = model_path
        if model.m != bundle.m or model.k != bundle.k:
            raise InvalidInputError(f"Model expects m={model.m}, k={model.k}; bundle has m={bundle.m}, k={bundle.k}")
    ensure_output_dir(config.out)
    report = evaluate_model(model, bundle, bundle.truth, eval_config)
    write_json(os.path.join(config.out, REPORT_FILE), report.to_json())
    print(f"✅ Evaluated {source} on {bundle.name} (n={min(bundle.n, eval_config.samples)})")
    _print_report(report)
    return report.row()


def cmd_adequacy(config: ExperimentConfig, data_dir=None, quiet=False):
    values = dict(ADEQUACY_DEFAULTS, **config.values)
    train_config = _train_config(config)
    eval_config = _eval_config(config)
    seed = train_config.seed
    if data_dir:
        bundle = load_bundle(data_dir)
    else:
        if values["dataset"] not in ("pendulum", "flow"):
            raise InvalidInputError(f"Adequacy study needs pendulum or flow, got '{values['dataset']}'")
        bundle = generate_bundle(values["dataset"], int(values["n"]), seed, int(values["m_u"]),
                                 float(values["noise_sd"]), float(values["noise_fraction"]))
    variants = graph_variants(bundle.truth, int(values["variants"]), split_seed(seed)["eval"])
    seeds: List[int] = [seed + i for i in range(int(values["seeds"]))]
    ensure_output_dir(config.out)
    print(f"📦 {bundle.name}: {len(variants)} variants x {len(seeds)} seeds, {train_config.steps} steps each")

    with tqdm(total=len(variants) * len(seeds), desc="cells", disable=quiet, file=sys.stderr) as bar:
        result = adequacy_study(bundle, variants, seeds, train_config, eval_config,
                                progress=lambda done, total: bar.update(1))

    save_adequacy(result, config.out)
    print(f"✅ {len(result.rows)} rows -> {config.out}")
    print(f"📊 {result.method} correlation (metric x variant rubric):")
    print(result.correlations.to_string(float_format=lambda v: f"{v:+.3f}"))
    if result.degenerate:
        print("⚠️  Some correlations are undefined (constant column); reported as NaN")
    return {f"{m}_{r}": result.r(m, r) for m in ("mic", "pos_mic", "neg_mic") for r in ("tpr", "fdr")}


def _add_common(parser):
    parser.add_argument('--out', required=True, help='Output directory')
    parser.add_argument('--config', help='Flat JSON config file')
    parser.add_argument('--seed', type=int, help='Run seed (64-bit, split per consumer)')
    parser.add_argument('-v', '--verbose', action='store_true', help='INFO logging')
    parser.add_argument('--quiet', action='store_true', help='No progress bars')


def _add_training(parser):
    parser.add_argument('--label-fraction', type=float, help='Fraction of labeled samples (> 0 adds label terms)')
    parser.add_argument('--no-do-cause', action='store_true', help='Drop the do-cause loss')
    parser.add_argument('--no-do-effect', action='store_true', help='Drop the do-effect loss and classifier')
    parser.add_argument('--cdl-mode', choices=['linear', 'gae'], help='Causal layer form')
    parser.add_argument('--effect-target', type=int, choices=[0, 1], help='Label the counterfactuals are pushed to')
    parser.add_argument('--steps', type=int, help='Training steps')


def build_parser():
    parser = argparse.ArgumentParser(description="Causal representation learning with do-operation swaps")
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', help='Write a dataset bundle or the Gaussian counterexample',
                         epilog='config keys: ' + ', '.join(COMMAND_KEYS['generate']))
    _add_common(gen)
    gen.add_argument('--dataset', choices=DATASETS)
    gen.add_argument('--n', type=int, help='Number of samples')
    gen.add_argument('--literal', action='store_true', default=None,
                     help='Counterexample: construction as printed instead of the rho-coupled one')

    tr = sub.add_parser('train', help='Train a model on a bundle',
                        epilog='config keys: ' + ', '.join(COMMAND_KEYS['train']))
    _add_common(tr)
    tr.add_argument('--data', required=True, help='Bundle directory')
    _add_training(tr)

    ev = sub.add_parser('evaluate', help='Score a model with MIC/TIC, Pos/Neg, F1 and graph rubrics',
                        epilog='config keys: ' + ', '.join(COMMAND_KEYS['evaluate']))
    _add_common(ev)
    ev.add_argument('--data', required=True, help='Bundle directory')
    ev.add_argument('--model', help='Model JSON written by train')
    ev.add_argument('--oracle', action='store_true', default=None, help='Score the ground-truth oracle model')

    ad = sub.add_parser('adequacy', help='Correlate metrics with graph rubrics over graph variants',
                        epilog='config keys: ' + ', '.join(COMMAND_KEYS['adequacy']))
    _add_common(ad)
    ad.add_argument('--data', help='Bundle directory (default: generate from config)')
    ad.add_argument('--correlation', choices=['pearson', 'spearman'])
    _add_training(ad)
    return parser


def _overrides(args):
    overrides = {"seed": args.seed}
    if args.command == "generate":
        overrides.update(dataset=args.dataset, n=args.n, literal=args.literal)
    if args.command in ("train", "adequacy"):
        overrides.update(
            label_fraction=args.label_fraction,
            cdl_mode=args.cdl_mode,
            effect_target_label=args.effect_target,
            steps=args.steps,
            enable_do_cause=False if args.no_do_cause else None,
            enable_do_effect=False if args.no_do_effect else None,
        )
    if args.command == "evaluate":
        overrides.update(oracle=args.oracle)
        overrides.pop("seed")
    if args.command == "adequacy":
        overrides.update(correlation=args.correlation)
    return overrides


def run(argv=None):
    """Parse, dispatch, and map errors to exit codes"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')

    _print_banner(f"causal_lab {args.command}")
    ledger = None
    try:
        config = build_config(args.command, read_config(args.config), _overrides(args), args.out)
        ledger = RunLedger(args.command, config.get("seed"), config.values, args.out).start()
        if args.command == "generate":
            metrics = cmd_generate(config)
        elif args.command == "train":
            metrics = cmd_train(config, args.data, quiet=args.quiet)
        elif args.command == "evaluate":
            metrics = cmd_evaluate(config, args.data, args.model)
        else:
            metrics = cmd_adequacy(config, args.data, quiet=args.quiet)
    except NumericError as e:
        print(f"❌ Numeric failure: {e}")
        if ledger:
            ledger.finish(error=e)
        return EXIT_NUMERIC
    except (LabError, ValueError, OSError) as e:
        print(f"❌ {e}")
        if ledger:
            ledger.finish(error=e)
        return EXIT_INPUT
    ledger.finish(metrics)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
