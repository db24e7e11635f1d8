"""Command-line front end.

Sweep commands read an INI experiment file and write the flat results CSV;
the single-shot commands (train/finetune/uda/thresholds/mmi/decode) work on
one operating point and print a short report.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import ecc, transfer
from .channel import (
    GrayMap,
    NoiseFamily,
    OperatingPoint,
    make_dataset,
    params_for_cell,
    state_moments,
)
from .harness import (
    parse_experiment_config,
    resolve_output,
    run_coded_sweep,
    run_rber_sweep,
    run_training_size_study,
    write_rows,
)
from .neuralnet import TrainConfig, init_xavier, load_checkpoint, save_checkpoint, train
from .oracle import (
    ber_two_bit,
    error_rates,
    mmi_thresholds,
    mutual_information,
    optimal_thresholds,
)

FULL_SCALE_SOURCE_TRAIN = 1_000_000


def _add_op_point(parser: argparse.ArgumentParser, prefix: str = "") -> None:
    dash = f"--{prefix}" if prefix else "--"
    parser.add_argument(f"{dash}n-pe", type=float, default=10_000.0)
    parser.add_argument(f"{dash}t-hours", type=float, default=10_000.0)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--cell", choices=("mlc", "tlc", "qlc"), default="mlc")
    parser.add_argument("--family", choices=("gaussian", "gamma"), default="gaussian")
    parser.add_argument("--seed", type=int, default=0)


def _op_point(args: argparse.Namespace, prefix: str = "") -> OperatingPoint:
    pre = f"{prefix}_" if prefix else ""
    return OperatingPoint(
        getattr(args, f"{pre}n_pe"),
        getattr(args, f"{pre}t_hours"),
        NoiseFamily(args.family),
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )


def _sweep_config(args: argparse.Namespace):
    config = parse_experiment_config(args.config)
    if getattr(args, "full_scale", False):
        config = dataclasses.replace(config, source_train=FULL_SCALE_SOURCE_TRAIN)
    if getattr(args, "output", None):
        config = dataclasses.replace(config, output=args.output)
    return config


def _run_sweep(args: argparse.Namespace, runner) -> int:
    config = _sweep_config(args)
    rows = runner(config)
    out = resolve_output(config)
    write_rows(rows, out)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_sweep_rber(args: argparse.Namespace) -> int:
    return _run_sweep(args, run_rber_sweep)


def cmd_sweep_coded(args: argparse.Namespace) -> int:
    return _run_sweep(args, run_coded_sweep)


def cmd_train_size_study(args: argparse.Namespace) -> int:
    return _run_sweep(args, run_training_size_study)


def cmd_train(args: argparse.Namespace) -> int:
    params = params_for_cell(args.cell)
    dataset = make_dataset(params, args.samples, _op_point(args), args.seed)
    init = init_xavier(args.seed + 1)
    model, losses = train(dataset, _train_config(args), init)
    save_checkpoint(model, args.out)
    print(f"trained on {args.samples} reads; final epoch loss {losses[-1]:.6f}")
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    params = params_for_cell(args.cell)
    source = load_checkpoint(args.checkpoint)
    dataset = make_dataset(params, args.samples, _op_point(args), args.seed)
    model, losses = train(dataset, _train_config(args), source, freeze=("gru1",))
    save_checkpoint(model, args.out)
    print(
        f"fine-tuned ({model.trainable_parameters()} trainable of "
        f"{model.total_parameters()} weights); final epoch loss {losses[-1]:.6f}"
    )
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_uda(args: argparse.Namespace) -> int:
    params = params_for_cell(args.cell)
    source_model = load_checkpoint(args.checkpoint)
    source_op = OperatingPoint(
        args.source_n_pe, args.source_t_hours, NoiseFamily.GAUSSIAN
    )
    source = make_dataset(params, args.source_samples, source_op, args.seed)
    target = make_dataset(
        params, args.samples, _op_point(args), args.seed + 1, labeled=False
    )
    cfg = _train_config(args)
    model, shifted = transfer.uda_dtl(
        source,
        target,
        cfg,
        cfg,
        init_params=source_model,
        initial_centroids=np.asarray(params.nominal_voltages),
        source_params=source_model,
    )
    save_checkpoint(model, args.out)
    print(
        f"adapted without target labels; source reads shifted by "
        f"{np.mean(shifted - source.voltages):+.4f} on average"
    )
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_thresholds(args: argparse.Namespace) -> int:
    params = params_for_cell(args.cell)
    moments = state_moments(params, _op_point(args))
    thresholds = optimal_thresholds(moments)
    rates = error_rates(moments, thresholds, GrayMap.for_q(params.q))
    print("read thresholds (minimum symbol error):")
    for value in thresholds.values:
        print(f"  {value:.6f}")
    print(f"symbol error rate: {rates.ser:.6e}")
    print(f"bit error rate:    {rates.ber_two_bit:.6e}")
    return 0


def cmd_mmi(args: argparse.Namespace) -> int:
    params = params_for_cell(args.cell)
    moments = state_moments(params, _op_point(args))
    thresholds = mmi_thresholds(moments)
    mi = mutual_information(moments, thresholds)
    print("read thresholds (maximum mutual information):")
    for value in thresholds.values:
        print(f"  {value:.6f}")
    print(f"mutual information: {mi:.6f} bits")
    ber = ber_two_bit(moments, thresholds, GrayMap.for_q(params.q))
    print(f"bit error rate:     {ber:.6e}")
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    params = params_for_cell(args.cell)
    if args.alist:
        pcm = ecc.load_alist(args.alist)
    else:
        pcm = ecc.make_parity_check(seed=args.seed + 1)
    op = _op_point(args)
    moments = state_moments(params, op)
    thresholds = optimal_thresholds(moments)

    from .detect import threshold_detect

    result = ecc.coded_ber_experiment(
        params,
        op,
        pcm,
        lambda v: threshold_detect(thresholds, v),
        frames=args.frames,
        seed=args.seed,
        alpha=args.alpha,
        max_iter=args.max_iter,
    )
    print(f"code: n={pcm.n} k={pcm.k} rate={pcm.k / pcm.n:.4f}")
    print(f"frames: {result.frames}")
    print(f"raw bit error rate:   {result.raw_ber:.6e}")
    print(f"coded bit error rate: {result.coded_ber:.6e}")
    print(f"frame errors: {result.frame_errors}  decode failures: {result.decode_failures}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flashlab",
        description="Flash read-channel lab: simulate, detect, adapt, decode.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, runner, doc in (
        ("sweep-rber", cmd_sweep_rber, "raw bit-error-rate sweep from a config file"),
        ("sweep-coded", cmd_sweep_coded, "LDPC-coded sweep from a config file"),
        (
            "train-size-study",
            cmd_train_size_study,
            "error-rate spread versus training-set size",
        ),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("config", help="INI experiment file")
        p.add_argument("--full-scale", action="store_true",
                       help="use the full-size source training set (10^6 reads)")
        p.add_argument("--output", help="override the CSV path from the config")
        p.set_defaults(func=runner)

    p = sub.add_parser("train", help="train a detector network at one condition")
    _add_common(p)
    _add_op_point(p)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="adapt a checkpoint with labeled reads")
    _add_common(p)
    _add_op_point(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("uda", help="adapt a checkpoint without target labels")
    _add_common(p)
    _add_op_point(p)
    p.add_argument("--source-n-pe", type=float, default=0.0)
    p.add_argument("--source-t-hours", type=float, default=0.0)
    p.add_argument("--source-samples", type=int, default=200_000)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_uda)

    p = sub.add_parser("thresholds", help="print error-optimal read thresholds")
    _add_common(p)
    _add_op_point(p)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("mmi", help="print mutual-information-optimal thresholds")
    _add_common(p)
    _add_op_point(p)
    p.set_defaults(func=cmd_mmi)

    p = sub.add_parser("decode", help="run the coded pipeline at one condition")
    _add_common(p)
    _add_op_point(p)
    p.add_argument("--alist", help="parity-check matrix file (default: built-in code)")
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--max-iter", type=int, default=20)
    p.set_defaults(func=cmd_decode)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
