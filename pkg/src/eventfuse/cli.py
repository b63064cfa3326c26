"""Command-line surface.

Subcommands: generate, train, eval, gate-report, align-report, grad-check,
init-config. Exit codes: 0 success, 2 usage/config error, 3 data error,
4 numerical failure.

`generate` writes the JSONL dataset plus a `<out>.basepath.npy` sidecar
holding the simulated base series; `train` uses the sidecar (when present)
for stride-1 sliding-window pre-training and falls back to the event
windows otherwise.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import datagen, metrics, trainer
from .diagnostics import LOSS_CHECKS, run_loss_check
from .errors import ConfigError, DataError, NumericsError, ShapeError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _basepath_sidecar(data_path):
    return data_path + ".basepath.npy"


def _load_dataset(args, scenario=None):
    instances = datagen.ingest(args.data)
    if not instances:
        raise DataError(f"dataset {args.data} is empty")
    base_path = None
    sidecar = _basepath_sidecar(args.data)
    if os.path.exists(sidecar):
        base_path = np.load(sidecar)
    if scenario is not None:
        L = instances[0].window.values.shape
        if L != (scenario.lookback, scenario.d_x):
            raise DataError(
                f"dataset windows {L} do not match scenario "
                f"({scenario.lookback}, {scenario.d_x})"
            )
        H = instances[0].target.values.shape
        if H != (scenario.horizon, scenario.d_y):
            raise DataError(
                f"dataset targets {H} do not match scenario "
                f"({scenario.horizon}, {scenario.d_y})"
            )
    return datagen.Dataset(instances=instances, base_path=base_path, config=scenario)


def _select_split(instances, which):
    if which == "all":
        return instances
    train, val, test = datagen.split(instances)
    return {"train": train, "val": val, "test": test}[which]


def cmd_generate(args):
    run = cfgmod.load_config(args.config)
    scenario = run.scenario
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    dataset = datagen.generate(scenario)
    datagen.write_jsonl(dataset.instances, args.out, with_flags=args.with_oracle_flags)
    np.save(_basepath_sidecar(args.out), dataset.base_path)
    print(f"wrote {len(dataset.instances)} instances to {args.out}")
    return EXIT_OK


def cmd_train(args):
    run = cfgmod.load_config(args.config)
    scenario, train_cfg = run.scenario, run.train
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    dataset = _load_dataset(args, scenario)
    train_insts, val_insts, _ = datagen.split(dataset.instances)
    state = trainer.init_state(run.model, scenario, train_cfg)
    log = trainer.TrainLog()
    trainer.run_training(state, dataset, train_insts, val_insts, log)
    trainer.checkpoint_save(state, args.out)
    if args.log:
        log.write_csv(args.log)
    print(f"trained {state.step} steps; checkpoint at {args.out}")
    return EXIT_OK


def cmd_eval(args):
    state = trainer.checkpoint_load(args.checkpoint)
    if not state.completed(trainer.STAGE_MM):
        raise DataError(
            "branch comparison needs a stage-3 (multimodal) checkpoint; "
            f"stage history: {state.stage_history}"
        )
    instances = _select_split(datagen.ingest(args.data), args.split)
    if not instances:
        raise DataError("selected split is empty")
    name = args.dataset_name or os.path.splitext(os.path.basename(args.data))[0]
    report = metrics.compare_branches(state.model, instances, dataset_name=name)
    metrics.write_metrics_csv(report, args.out, scaled=not args.raw)
    scale_tag = "raw" if args.raw else "scaled"
    print(
        f"{name} H={report.horizon} n={report.n_instances} ({scale_tag}): "
        f"full mse {report.full.mse:.6g} vs ts-only {report.ts_only.mse:.6g} "
        f"({report.improvement_pct['mse']:+.2f}%), mean text gate "
        f"{report.mean_text_gate:.4f} -> {args.out}"
    )
    return EXIT_OK


def cmd_gate_report(args):
    state = trainer.checkpoint_load(args.checkpoint)
    if not state.completed(trainer.STAGE_MM):
        raise DataError("gate report needs a stage-3 (multimodal) checkpoint")
    instances = _select_split(datagen.ingest(args.data), args.split)
    report = metrics.gate_report(state.model, instances)
    rows_path = metrics.write_gate_report(report, args.out, svg=args.svg)
    print(
        f"gate report for {len(report.rows)} instances "
        f"(overall mean openness {report.overall_mean:.4f}) -> {rows_path}"
    )
    return EXIT_OK


def cmd_align_report(args):
    state = trainer.checkpoint_load(args.checkpoint)
    if not state.completed(trainer.STAGE_MM):
        raise DataError("align report needs a stage-3 (multimodal) checkpoint")
    instances = _select_split(datagen.ingest(args.data), args.split)
    rows = metrics.align_report(state.model, instances)
    with open(args.out, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(rows)} aligned-token rows to {args.out}")
    return EXIT_OK


def cmd_grad_check(args):
    names = list(LOSS_CHECKS) if args.module == "all" else [args.module]
    for name in names:
        if name not in LOSS_CHECKS:
            raise ConfigError(
                f"unknown module {name!r}; valid: {sorted(LOSS_CHECKS)} or 'all'"
            )
    failed = []
    for name in names:
        ok, worst = run_loss_check(name, seeds=args.seeds, tol=args.tol, sample=args.sample)
        print(f"{name}: {'PASS' if ok else 'FAIL'} (worst rel err {worst:.3e}, tol {args.tol:g})")
        if not ok:
            failed.append(name)
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_init_config(args):
    doc = cfgmod.default_config(args.preset)
    cfgmod.dump_config(doc, args.out)
    print(f"wrote {args.preset} config to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eventfuse",
        description="Event-driven multimodal forecasting: simulate, train, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a scenario to a JSONL dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--with-oracle-flags", action="store_true",
                   help="include simulator ground-truth flags (evaluation use only)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="run the three-stage schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training-log CSV path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics and fused-vs-series-only comparison")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out", required=True, help="metrics CSV path")
    scaling = p.add_mutually_exclusive_group()
    scaling.add_argument("--scaled", action="store_true", default=True,
                         help="report MSE x1e4, MAE x1e3, DHR x1e2 (default)")
    scaling.add_argument("--raw", action="store_true", default=False)
    p.add_argument("--dataset-name", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gate-report", help="gate-openness rows, means, histogram")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--svg", action="store_true", help="also emit an SVG histogram")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gate_report)

    p = sub.add_parser("align-report", help="aligned-token inspection JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_align_report)

    p = sub.add_parser("grad-check", help="finite-difference checks of every loss")
    p.add_argument("--module", default="all",
                   help=f"one of {sorted(LOSS_CHECKS)} or 'all'")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--sample", type=int, default=2,
                   help="coordinates checked per parameter tensor")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("init-config", help="write a default config JSON")
    p.add_argument("--preset", choices=("paper", "desk"), default="desk")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_init_config)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericsError, ShapeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
