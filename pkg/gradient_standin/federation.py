"""
Federated averaging simulator.

Every round each client copies the global parameters, runs local SGD on its
shard, turns the parameter delta into its accumulated round gradient and
transmits the transformed gradient in a
:class:`~gradient_standin.classes.StandinMessage`. The server only ever sees
those messages: it averages the payloads in ascending client-id order and
takes one step of size ``server_lr``. Moment states stay on the clients and
persist across rounds.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from gradient_standin.classes import Layer, RunHistory, StandinMessage
from gradient_standin.defense import MomentState, TransformKind, apply_transform
from gradient_standin.nn import (
    GradientSet,
    MlpSpec,
    Params,
    accuracy,
    as_flat,
    batch_loss,
    batch_loss_and_grad,
    check_congruent,
    init_params,
    scale,
    sgd_step,
    subtract,
)

DEFAULT_SERVER_LR = 1.0
# stand-in payloads are close to sign vectors
DEFAULT_STANDIN_SERVER_LR = 0.01

TestSet = Tuple[np.ndarray, np.ndarray]

HISTORY_COLUMNS = ["round", "train_loss", "test_accuracy", "payload_norm", "aggregate_norm"]


@dataclass(frozen=True)
class RoundConfig:
    """
    Settings shared by all clients in a round.

    ``server_lr`` defaults to 1.0, or 0.01 for the stand-in transform. A
    server step of 0 keeps the global model fixed.
    """

    local_iterations: int = 1
    batch_size: int = 32
    local_lr: float = 0.1
    server_lr: Optional[float] = None
    transform: TransformKind = field(default_factory=TransformKind.identity)

    def __post_init__(self):
        if self.local_iterations < 1:
            raise ValueError(f"local_iterations must be >= 1, not {self.local_iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, not {self.batch_size}")
        if not self.local_lr > 0:
            raise ValueError(f"local_lr must be > 0, not {self.local_lr}")
        if self.server_lr is None:
            default = (
                DEFAULT_STANDIN_SERVER_LR
                if self.transform.uses_moments
                else DEFAULT_SERVER_LR
            )
            object.__setattr__(self, "server_lr", default)
        if self.server_lr < 0:
            raise ValueError(f"server_lr must be >= 0, not {self.server_lr}")


@dataclass
class ClientState:
    """
    A client's private shard, moment state and round counter.

    The moment state is created from the first round gradient when the
    stand-in transform is in use, then kept for all later rounds.
    """

    client_id: int
    inputs: np.ndarray
    labels: np.ndarray
    moment: Optional[MomentState] = None
    seed: int = 0
    rounds_completed: int = 0

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype="float64"))
        self.labels = np.asarray(self.labels, dtype="int64").ravel()
        if self.labels.size == 0:
            raise ValueError(f"Client {self.client_id} has an empty shard")
        if self.inputs.shape[0] != self.labels.size:
            raise ValueError(
                f"Client {self.client_id} has {self.inputs.shape[0]} inputs but {self.labels.size} labels"
            )

    @property
    def shard_size(self) -> int:
        return self.labels.size


def make_clients(
    inputs: np.ndarray, labels: np.ndarray, n_clients: int, seed: int
) -> List[ClientState]:
    """
    Shuffle a dataset with ``seed`` and cut it into equal contiguous shards.

    Samples beyond ``n_clients * (n // n_clients)`` are dropped with a warning.
    """
    inputs = np.asarray(inputs, dtype="float64")
    labels = np.asarray(labels)
    if n_clients < 1:
        raise ValueError(f"Need at least one client, not {n_clients}")
    shard = labels.shape[0] // n_clients
    if shard == 0:
        raise ValueError(f"{labels.shape[0]} samples cannot fill {n_clients} shards")
    dropped = labels.shape[0] - shard * n_clients
    if dropped:
        logger.warning(f"Dropping {dropped} samples to keep {n_clients} shards of {shard}")

    order = np.random.default_rng(seed).permutation(labels.shape[0])
    client_seeds = np.random.SeedSequence(seed).generate_state(n_clients)
    return [
        ClientState(
            client_id=index,
            inputs=inputs[order[index * shard : (index + 1) * shard]],
            labels=labels[order[index * shard : (index + 1) * shard]],
            seed=int(client_seeds[index]),
        )
        for index in range(n_clients)
    ]


def check_equal_shards(clients: Sequence[ClientState]) -> None:
    """Raise ``ValueError`` unless every client holds the same number of samples."""
    sizes = {client.client_id: client.shard_size for client in clients}
    if len(set(sizes.values())) > 1:
        raise ValueError(f"All shards must have equal size, got {sizes}")


def local_round(
    client: ClientState, global_params: Params, cfg: RoundConfig, spec: MlpSpec
) -> StandinMessage:
    """
    One round of local training on a client.

    Parameters
    ----------
    client : ClientState
        Its moment state and round counter are updated.
    global_params : Params
        Current global model. Not modified.
    cfg : RoundConfig
    spec : MlpSpec

    Returns
    -------
    StandinMessage
        Payload is the transformed accumulated gradient
        ``(ω_start - ω_end) / local_lr``.
    """
    rng = np.random.default_rng([client.seed, client.rounds_completed])
    count = client.shard_size
    params = global_params
    for _ in range(cfg.local_iterations):
        if cfg.batch_size >= count:
            batch = np.arange(count)
        else:
            batch = rng.choice(count, size=cfg.batch_size, replace=False)
        _, grads = batch_loss_and_grad(spec, params, client.inputs[batch], client.labels[batch])
        params = sgd_step(params, grads, cfg.local_lr)

    round_grad = scale(subtract(global_params, params), 1.0 / cfg.local_lr)
    if cfg.transform.uses_moments and client.moment is None:
        client.moment = MomentState.fresh(round_grad)
    payload = apply_transform(
        cfg.transform,
        round_grad,
        moment=client.moment,
        seed=int(rng.integers(2**63)),
    )
    client.rounds_completed += 1
    return StandinMessage(client_id=client.client_id, sample_count=count, payload=payload)


def aggregate(messages: Sequence[StandinMessage]) -> GradientSet:
    """
    Unweighted mean of the payloads, summed in ascending client-id order.

    Raises
    ------
    ValueError
        For an empty list, repeated client ids, incongruent payloads or
        unequal sample counts.
    """
    if not messages:
        raise ValueError("Cannot aggregate an empty list of messages")
    ordered = sorted(messages, key=lambda message: message.client_id)
    ids = [message.client_id for message in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError(f"Repeated client ids in round: {ids}")
    counts = {message.sample_count for message in ordered}
    if len(counts) > 1:
        raise ValueError(f"Unequal shard sizes across clients: {sorted(counts)}")

    total = ordered[0].payload
    for message in ordered[1:]:
        check_congruent(total, message.payload)
        total = tuple(
            Layer(weight=acc.weight + layer.weight, bias=acc.bias + layer.bias)
            for acc, layer in zip(total, message.payload)
        )
    return scale(total, 1.0 / len(ordered))


def apply_global_update(global_params: Params, agg: GradientSet, cfg: RoundConfig) -> Params:
    """Server step ``ω ← ω - server_lr · agg``."""
    return sgd_step(global_params, agg, cfg.server_lr)


def _norm(grads: GradientSet) -> float:
    return float(np.linalg.norm(as_flat(grads)[0]))


def run_federation(
    clients: Sequence[ClientState],
    spec: MlpSpec,
    cfg: RoundConfig,
    rounds: int,
    test_set: Optional[TestSet] = None,
    params: Optional[Params] = None,
    init_seed: int = 0,
    threads: int = 1,
) -> RunHistory:
    """
    Run ``rounds`` rounds of federated averaging with full participation.

    Parameters
    ----------
    clients : sequence of ClientState
        Mutated: moment states and round counters advance.
    spec : MlpSpec
    cfg : RoundConfig
    rounds : int
        At least 1.
    test_set : tuple of np.ndarray, optional
        Held-out ``(inputs, labels)``; accuracy is NaN without it.
    params : Params, optional
        Initial global model; ``init_params(spec, init_seed)`` otherwise.
    threads : int
        Clients of a round run on this many threads. Results do not depend
        on it.

    Returns
    -------
    RunHistory
        ``records`` has one row per round with columns ``HISTORY_COLUMNS``;
        ``params`` is the final global model.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, not {rounds}")
    if not clients:
        raise ValueError("A federation needs at least one client")
    check_equal_shards(clients)
    global_params = init_params(spec, init_seed) if params is None else params
    train_inputs = np.concatenate([client.inputs for client in clients])
    train_labels = np.concatenate([client.labels for client in clients])

    records = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for round_index in range(1, rounds + 1):
            if pool is None:
                messages = [local_round(c, global_params, cfg, spec) for c in clients]
            else:
                futures = [
                    pool.submit(local_round, c, global_params, cfg, spec) for c in clients
                ]
                messages = [future.result() for future in futures]
            agg = aggregate(messages)
            global_params = apply_global_update(global_params, agg, cfg)

            record = {
                "round": round_index,
                "train_loss": batch_loss(spec, global_params, train_inputs, train_labels),
                "test_accuracy": (
                    accuracy(spec, global_params, *test_set) if test_set is not None else np.nan
                ),
                "payload_norm": float(np.mean([_norm(m.payload) for m in messages])),
                "aggregate_norm": _norm(agg),
            }
            records.append(record)
            logger.debug(
                f"round {round_index}: loss {record['train_loss']:.4f}, "
                f"accuracy {record['test_accuracy']:.4f}"
            )
    finally:
        if pool is not None:
            pool.shutdown()

    logger.info(
        f"Federated run with {len(clients)} clients and transform "
        f"{cfg.transform.describe()} finished after {rounds} rounds"
    )
    return RunHistory(records=pd.DataFrame(records, columns=HISTORY_COLUMNS), params=global_params)


def train_centralized(
    spec: MlpSpec,
    inputs: np.ndarray,
    labels: np.ndarray,
    steps: int,
    lr: float,
    batch_size: Optional[int] = None,
    seed: int = 0,
    test_set: Optional[TestSet] = None,
    params: Optional[Params] = None,
    init_seed: int = 0,
) -> RunHistory:
    """
    Plain minibatch SGD on the pooled data, one record per step.

    ``batch_size=None`` uses the full batch. Records carry the same columns as
    :func:`run_federation`, with the gradient norm in both norm columns.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, not {steps}")
    inputs = np.asarray(inputs, dtype="float64")
    labels = np.asarray(labels)
    count = labels.shape[0]
    rng = np.random.default_rng(seed)
    current = init_params(spec, init_seed) if params is None else params

    records = []
    for step in range(1, steps + 1):
        if batch_size is None or batch_size >= count:
            batch = np.arange(count)
        else:
            batch = rng.choice(count, size=batch_size, replace=False)
        _, grads = batch_loss_and_grad(spec, current, inputs[batch], labels[batch])
        current = sgd_step(current, grads, lr)
        norm = _norm(grads)
        records.append(
            {
                "round": step,
                "train_loss": batch_loss(spec, current, inputs, labels),
                "test_accuracy": (
                    accuracy(spec, current, *test_set) if test_set is not None else np.nan
                ),
                "payload_norm": norm,
                "aggregate_norm": norm,
            }
        )
    logger.info(f"Centralized SGD finished after {steps} steps")
    return RunHistory(records=pd.DataFrame(records, columns=HISTORY_COLUMNS), params=current)
