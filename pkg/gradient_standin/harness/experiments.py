"""
End-to-end runs behind the command-line interface.

Every function takes an :class:`~gradient_standin.harness.config.ExperimentConfig`
and a seed and returns pandas DataFrames; seeds run on a thread pool when
``run.threads > 1`` and results are concatenated in seed order.
"""

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from gradient_standin.attacks import AttackDivergedError, infer_label_sign, run_attack
from gradient_standin.classes import ImagePair, RunHistory
from gradient_standin.defense import MomentState, TransformKind, apply_transform
from gradient_standin.federation import make_clients, run_federation, train_centralized
from gradient_standin.harness.config import DatasetConfig, ExperimentConfig
from gradient_standin.harness.data_loader import Dataset, downsample, gen_blobs, load_idx
from gradient_standin.harness.persistence import write_csv
from gradient_standin.metrics import quality
from gradient_standin.nn import GradientSet, MlpSpec, Params, init_params, loss_and_grad

EXPERIMENT_COLUMNS = ["method", "model", "dataset", "defense", "mse", "psnr", "ssim", "seed"]
LABEL_COLUMNS = ["method", "defense", "trials", "correct", "accuracy"]
ACCURACY_COLUMNS = ["setting", "model", "dataset", "rounds", "accuracy"]


def prepare_dataset(cfg: DatasetConfig, seed: int) -> Dataset:
    """
    Materialize the configured dataset with inputs scaled to [0, 1] for IDX data.

    Blob inputs are used as generated and have a value range of 1.0.
    """
    if cfg.kind == "blobs":
        inputs, labels = gen_blobs(
            cfg.n_per_class, cfg.dims, cfg.classes, cfg.spread, seed, scale=cfg.scale
        )
        side = int(round(np.sqrt(cfg.dims)))
        shape = (side, side) if side * side == cfg.dims else None
        return Dataset(inputs, labels, 1.0, shape, cfg.name)

    images, labels = load_idx(cfg.images, cfg.labels)
    if cfg.limit is not None:
        images, labels = images[: cfg.limit], labels[: cfg.limit]
    if cfg.downsample > 1:
        images = np.stack([downsample(image, cfg.downsample) for image in images])
    shape = images.shape[1:]
    return Dataset(images.reshape(images.shape[0], -1) / 255.0, labels, 255.0, shape, cfg.name)


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first ``test_fraction`` of samples become the test set."""
    order = np.random.default_rng(seed).permutation(dataset.labels.size)
    cut = max(1, int(round(test_fraction * order.size)))
    test, train = order[:cut], order[cut:]
    return (
        dataset._replace(inputs=dataset.inputs[train], labels=dataset.labels[train]),
        dataset._replace(inputs=dataset.inputs[test], labels=dataset.labels[test]),
    )


def victim_gradient(
    spec: MlpSpec, params: Params, x: np.ndarray, label: int, kind: TransformKind, seed: int
) -> Tuple[GradientSet, GradientSet]:
    """
    Raw and transmitted gradient of a client holding one example in round one.

    The stand-in starts from a fresh moment state.
    """
    _, raw, _ = loss_and_grad(spec, params, x, label)
    moment = MomentState.fresh(raw) if kind.uses_moments else None
    return raw, apply_transform(kind, raw, moment=moment, seed=seed)


def _map_seeds(cfg: ExperimentConfig, task: Callable[[int], object]) -> List:
    seeds = list(cfg.run.seeds)
    if cfg.run.threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=cfg.run.threads) as pool:
            return list(pool.map(task, seeds))
    return [task(seed) for seed in seeds]


def train(cfg: ExperimentConfig, seed: int) -> RunHistory:
    """Federated run with the configured transform on a seeded train/test split."""
    train_set, test_set = split_dataset(
        prepare_dataset(cfg.dataset, seed), cfg.dataset.test_fraction, seed
    )
    clients = make_clients(train_set.inputs, train_set.labels, cfg.federation.clients, seed)
    return run_federation(
        clients,
        cfg.model,
        cfg.federation.round_config(),
        cfg.federation.rounds,
        test_set=(test_set.inputs, test_set.labels),
        init_seed=seed,
        threads=cfg.run.threads,
    )


def _attack_rows(cfg: ExperimentConfig, seed: int) -> List[Dict]:
    dataset = prepare_dataset(cfg.dataset, seed)
    rng = np.random.default_rng(seed)
    index = int(rng.integers(dataset.labels.size))
    x, label = dataset.inputs[index], int(dataset.labels[index])
    params = init_params(cfg.model, seed)
    scale = dataset.value_range
    shape = dataset.image_shape or x.shape
    reference = (x * scale).reshape(shape)

    rows = []
    for defense in cfg.run.defenses:
        _, target = victim_gradient(cfg.model, params, x, label, defense, seed)
        for method in cfg.run.methods:
            if method == "label_sign":
                continue
            attack = dataclasses.replace(cfg.attack, method=method, seed=seed)
            try:
                report = run_attack(target, cfg.model, params, attack)
                candidate = np.asarray(report.reconstruction).reshape(shape) * scale
                metrics = quality(ImagePair(reference, candidate, scale))
            except (ValueError, AttackDivergedError) as error:
                logger.warning(f"{method} against {defense.describe()} failed: {error}")
                metrics = None
            rows.append(
                {
                    "method": method,
                    "model": cfg.model.describe(),
                    "dataset": dataset.name,
                    "defense": defense.describe(),
                    "mse": np.nan if metrics is None else metrics.mse,
                    "psnr": np.nan if metrics is None else metrics.psnr,
                    "ssim": np.nan if metrics is None else metrics.ssim,
                    "seed": seed,
                }
            )
    return rows


def defense_efficacy(cfg: ExperimentConfig) -> pd.DataFrame:
    """
    Attack every configured defense with every configured method, once per seed.

    Each seed draws one victim example and a fresh model initialized with that
    seed. Metrics are computed in the dataset's native intensity range.
    """
    rows = [row for chunk in _map_seeds(cfg, lambda seed: _attack_rows(cfg, seed)) for row in chunk]
    return pd.DataFrame(rows, columns=EXPERIMENT_COLUMNS)


def label_inference(cfg: ExperimentConfig, seed: Optional[int] = None) -> pd.DataFrame:
    """Success rate of the sign rule on round-one messages, per defense."""
    seed = cfg.run.seeds[0] if seed is None else seed
    dataset = prepare_dataset(cfg.dataset, seed)
    rng = np.random.default_rng([seed, 1])
    trials = cfg.run.label_trials
    picks = rng.integers(dataset.labels.size, size=trials)
    model_seeds = rng.integers(2**32, size=trials)

    rows = []
    for defense in cfg.run.defenses:
        correct = 0
        for trial in range(trials):
            params = init_params(cfg.model, int(model_seeds[trial]))
            x, label = dataset.inputs[picks[trial]], int(dataset.labels[picks[trial]])
            _, target = victim_gradient(cfg.model, params, x, label, defense, int(model_seeds[trial]))
            correct += int(infer_label_sign(target[-1].bias) == label)
        rows.append(
            {
                "method": "label_sign",
                "defense": defense.describe(),
                "trials": trials,
                "correct": correct,
                "accuracy": correct / trials,
            }
        )
    return pd.DataFrame(rows, columns=LABEL_COLUMNS)


def accuracy_comparison(cfg: ExperimentConfig, seed: Optional[int] = None) -> pd.DataFrame:
    """
    Test accuracy of centralized SGD, FedAvg and FedAvg with the stand-in.

    Centralized training takes ``rounds × local_iterations`` steps with the
    local learning rate and batch size on the pooled training data.
    """
    seed = cfg.run.seeds[0] if seed is None else seed
    fed = cfg.federation
    train_set, test_set = split_dataset(
        prepare_dataset(cfg.dataset, seed), cfg.dataset.test_fraction, seed
    )
    held_out = (test_set.inputs, test_set.labels)

    central = train_centralized(
        cfg.model,
        train_set.inputs,
        train_set.labels,
        steps=fed.rounds * fed.local_iterations,
        lr=fed.local_lr,
        batch_size=fed.batch_size,
        seed=seed,
        test_set=held_out,
        init_seed=seed,
    )
    results = [("centralized", central)]
    for setting, kind in (("fedavg", TransformKind.identity()), ("fedavg+standin", TransformKind.standin())):
        clients = make_clients(train_set.inputs, train_set.labels, fed.clients, seed)
        history = run_federation(
            clients,
            cfg.model,
            fed.round_config(kind),
            fed.rounds,
            test_set=held_out,
            init_seed=seed,
            threads=cfg.run.threads,
        )
        results.append((setting, history))

    return pd.DataFrame(
        [
            {
                "setting": setting,
                "model": cfg.model.describe(),
                "dataset": cfg.dataset.name,
                "rounds": fed.rounds,
                "accuracy": float(history.records["test_accuracy"].iloc[-1]),
            }
            for setting, history in results
        ],
        columns=ACCURACY_COLUMNS,
    )


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> Dict[str, pd.DataFrame]:
    """
    Defense-efficacy table, label-inference table and accuracy comparison.

    Writes ``experiment.csv``, ``labels.csv`` and ``accuracy.csv`` to
    ``out_dir`` (``run.output`` by default).
    """
    out_dir = Path(cfg.run.output if out_dir is None else out_dir)
    tables = {
        "experiment": defense_efficacy(cfg),
        "labels": label_inference(cfg),
        "accuracy": accuracy_comparison(cfg),
    }
    for name, frame in tables.items():
        write_csv(frame, out_dir / f"{name}.csv")
    return tables
