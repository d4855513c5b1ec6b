"""
Command-line interface.

Sub-commands: ``train``, ``dump-grads``, ``attack``, ``experiment`` and
``verify``. Exit codes: 0 on success, 1 when verification fails, 2 on a
configuration error.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from gradient_standin import __version__
from gradient_standin.attacks import run_attack
from gradient_standin.classes import GradientDump, ImagePair
from gradient_standin.defense import TransformKind
from gradient_standin.harness.config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    with_overrides,
)
from gradient_standin.harness.data_loader import IdxFormatError
from gradient_standin.harness.experiments import (
    prepare_dataset,
    run_experiment,
    train,
    victim_gradient,
)
from gradient_standin.harness.persistence import (
    gradient_tensors,
    gradients_from_tensors,
    read_dump,
    spec_hash,
    write_csv,
    write_dump,
    write_pgm,
)
from gradient_standin.harness.verification import report_passed, verify_appendix
from gradient_standin.metrics import quality
from gradient_standin.nn import init_params

EXIT_OK, EXIT_VERIFY_FAILED, EXIT_CONFIG_ERROR = 0, 1, 2

GRADIENTS_FILE = "gradients.gsd"
PARAMS_FILE = "params.gsd"
REFERENCE_FILE = "reference.gsd"

ATTACK_COLUMNS = [
    "method",
    "model",
    "dataset",
    "defense",
    "mse",
    "psnr",
    "ssim",
    "seed",
    "label",
    "true_label",
    "iterations",
    "final_objective",
]


def _add_common(parser: argparse.ArgumentParser, needs_config: bool = True) -> None:
    parser.add_argument(
        "--config", type=Path, required=needs_config, help="Experiment configuration file."
    )
    parser.add_argument("--seed", type=int, help="Run only this seed.")
    parser.add_argument("--threads", type=int, help="Worker threads for clients or seeds.")
    parser.add_argument("--out", type=Path, help="Output directory.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log per-iteration detail.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradient-standin",
        description="Federated-learning lab for the Adam-moment gradient stand-in.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    _add_common(commands.add_parser("train", help="Federated run, writes history CSVs."))

    dump = commands.add_parser("dump-grads", help="Write the round-one message of one client.")
    _add_common(dump)
    dump.add_argument("--index", type=int, help="Dataset index of the victim example.")
    dump.add_argument("--transform", help="Transform overriding federation.transform.")

    attack = commands.add_parser("attack", help="Attack a gradient dump.")
    _add_common(attack)
    attack.add_argument("--dump-dir", type=Path, help="Directory written by dump-grads.")

    _add_common(commands.add_parser("experiment", help="Defense-efficacy tables."))
    _add_common(commands.add_parser("verify", help="Check the derivative analysis."), needs_config=False)
    return parser


def _configure_logging(verbose: bool) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO")


def _load(args) -> ExperimentConfig:
    return with_overrides(load_config(args.config), args.seed, args.threads, args.out)


def _cmd_train(cfg: ExperimentConfig) -> int:
    out = Path(cfg.run.output)
    for seed in cfg.run.seeds:
        history = train(cfg, seed)
        write_csv(history.records, out / f"history_seed{seed}.csv")
    return EXIT_OK


def _cmd_dump(cfg: ExperimentConfig, index: Optional[int], transform: Optional[str]) -> int:
    seed = cfg.run.seeds[0]
    try:
        kind = cfg.federation.transform if transform is None else TransformKind.parse(transform)
    except ValueError as error:
        raise ConfigError(str(error)) from error
    dataset = prepare_dataset(cfg.dataset, seed)
    if index is None:
        index = int(np.random.default_rng(seed).integers(dataset.labels.size))
    elif not 0 <= index < dataset.labels.size:
        raise ConfigError(f"--index must lie in [0, {dataset.labels.size}), not {index}")
    x, label = dataset.inputs[index], int(dataset.labels[index])
    params = init_params(cfg.model, seed)
    _, payload = victim_gradient(cfg.model, params, x, label, kind, seed)

    digest = spec_hash(cfg.model)
    out = Path(cfg.run.output)
    common = dict(spec_hash=digest, round=1, client_id=0, transform=kind.describe())
    write_dump(GradientDump(tensors=gradient_tensors(payload), kind="gradient", **common), out / GRADIENTS_FILE)
    write_dump(GradientDump(tensors=gradient_tensors(params), kind="params", **common), out / PARAMS_FILE)
    write_dump(
        GradientDump(tensors=(x, np.array([float(label)])), kind="reference", **common),
        out / REFERENCE_FILE,
    )
    logger.info(f"Dumped round-one {kind.describe()} message of example {index} to {out}")
    return EXIT_OK


def _read_matching(path: Path, digest: str, kind: str) -> GradientDump:
    if not path.is_file():
        raise ConfigError(f"Missing {kind} dump: {path}")
    dump = read_dump(path)
    if dump.kind != kind:
        raise ConfigError(f"{path} holds a {dump.kind} dump, expected {kind}")
    if dump.spec_hash != digest:
        raise ConfigError(f"{path} was written for a different model than the configured one")
    return dump


def _cmd_attack(cfg: ExperimentConfig, dump_dir: Optional[Path]) -> int:
    source = Path(cfg.run.output if dump_dir is None else dump_dir)
    digest = spec_hash(cfg.model)
    gradients = _read_matching(source / GRADIENTS_FILE, digest, "gradient")
    params = gradients_from_tensors(_read_matching(source / PARAMS_FILE, digest, "params").tensors)
    reference_path = source / REFERENCE_FILE
    reference = (
        _read_matching(reference_path, digest, "reference") if reference_path.exists() else None
    )

    dataset = prepare_dataset(cfg.dataset, cfg.run.seeds[0])
    target = gradients_from_tensors(gradients.tensors)
    report = run_attack(target, cfg.model, params, cfg.attack)

    row = {
        "method": cfg.attack.method,
        "model": cfg.model.describe(),
        "dataset": dataset.name,
        "defense": gradients.transform,
        "mse": np.nan,
        "psnr": np.nan,
        "ssim": np.nan,
        "seed": cfg.attack.seed,
        "label": report.label,
        "true_label": -1 if reference is None else int(reference.tensors[1][0]),
        "iterations": len(report.objective_trace),
        "final_objective": report.objective_trace[-1] if report.objective_trace else np.nan,
    }
    out = Path(cfg.run.output)
    if report.reconstruction is not None:
        scale = dataset.value_range
        shape = dataset.image_shape or report.reconstruction.shape
        candidate = report.reconstruction.reshape(shape) * scale
        if len(shape) == 2:
            write_pgm(candidate, scale, out / "reconstruction.pgm")
        if reference is not None:
            truth = reference.tensors[0].reshape(shape) * scale
            metrics = quality(ImagePair(truth, candidate, scale))
            row.update(mse=metrics.mse, psnr=metrics.psnr, ssim=metrics.ssim)
            if len(shape) == 2:
                write_pgm(truth, scale, out / "reference.pgm")
    write_csv(pd.DataFrame([row], columns=ATTACK_COLUMNS), out / "attack.csv")
    return EXIT_OK


def _cmd_verify(seed: Optional[int], out: Optional[Path]) -> int:
    report = verify_appendix(seed=0 if seed is None else seed)
    for row in report.itertuples(index=False):
        logger.info(
            f"{'PASS' if row.passed else 'FAIL'}{'' if row.asserted else ' (info)'} "
            f"{row.name}: {row.value:.6g} {row.comparison} {row.expected:.6g}"
        )
    if out is not None:
        write_csv(report, Path(out) / "verify.csv")
    return EXIT_OK if report_passed(report) else EXIT_VERIFY_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        if args.command == "verify":
            return _cmd_verify(args.seed, args.out)
        cfg = _load(args)
        if args.command == "train":
            return _cmd_train(cfg)
        if args.command == "dump-grads":
            return _cmd_dump(cfg, args.index, args.transform)
        if args.command == "attack":
            return _cmd_attack(cfg, args.dump_dir)
        run_experiment(cfg)
        return EXIT_OK
    except ConfigError as error:
        logger.error(f"Configuration error: {error}")
        return EXIT_CONFIG_ERROR
    except IdxFormatError as error:
        logger.error(f"Unreadable dataset: {error}")
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
