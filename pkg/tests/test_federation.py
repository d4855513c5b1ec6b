"""Tests for the federated averaging simulator."""

import numpy as np
import pandas as pd
import pytest

from gradient_standin.classes import Layer, StandinMessage
from gradient_standin.defense import TransformKind
from gradient_standin.federation import (
    HISTORY_COLUMNS,
    ClientState,
    RoundConfig,
    aggregate,
    apply_global_update,
    local_round,
    make_clients,
    run_federation,
    train_centralized,
)
from gradient_standin.nn import batch_loss_and_grad, flatten, init_params


@pytest.fixture
def shard(rng):
    return rng.standard_normal((12, 4)), rng.integers(2, size=12)


def message(client_id, values, count=10):
    return StandinMessage(
        client_id=client_id,
        sample_count=count,
        payload=(Layer(weight=np.array([[values[0]]]), bias=np.array([values[1]])),),
    )


def test_round_config_defaults():
    assert RoundConfig().server_lr == 1.0
    assert RoundConfig(transform=TransformKind.standin()).server_lr == 0.01
    assert RoundConfig(server_lr=0.0).server_lr == 0.0


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"local_iterations": 0}, "local_iterations"),
        ({"batch_size": 0}, "batch_size"),
        ({"local_lr": 0.0}, "local_lr"),
        ({"server_lr": -1.0}, "server_lr"),
    ],
)
def test_round_config_errors(kwargs, match):
    with pytest.raises(ValueError, match=match):
        RoundConfig(**kwargs)


def test_client_state_validation():
    with pytest.raises(ValueError, match="empty shard"):
        ClientState(client_id=0, inputs=np.zeros((0, 3)), labels=np.zeros(0))
    with pytest.raises(ValueError, match="labels"):
        ClientState(client_id=0, inputs=np.zeros((2, 3)), labels=np.zeros(3))


def test_make_clients(rng):
    inputs, labels = rng.standard_normal((10, 2)), rng.integers(2, size=10)
    clients = make_clients(inputs, labels, 3, seed=0)
    assert [c.shard_size for c in clients] == [3, 3, 3]
    assert [c.client_id for c in clients] == [0, 1, 2]
    again = make_clients(inputs, labels, 3, seed=0)
    np.testing.assert_array_equal(clients[1].inputs, again[1].inputs)
    assert len({c.seed for c in clients}) == 3
    with pytest.raises(ValueError, match="cannot fill"):
        make_clients(inputs, labels, 11, seed=0)


def test_identity_payload_is_mean_gradient(small_spec, small_params, shard):
    client = ClientState(client_id=0, inputs=shard[0], labels=shard[1])
    cfg = RoundConfig(batch_size=12)
    sent = local_round(client, small_params, cfg, small_spec)
    _, expected = batch_loss_and_grad(small_spec, small_params, *shard)
    np.testing.assert_allclose(flatten(sent.payload), flatten(expected), atol=1e-12)
    assert sent.sample_count == 12
    assert client.rounds_completed == 1


def test_payload_does_not_depend_on_local_lr(small_spec, small_params, shard):
    payloads = []
    for lr in (0.01, 0.5):
        client = ClientState(client_id=0, inputs=shard[0], labels=shard[1])
        payloads.append(flatten(local_round(client, small_params, RoundConfig(local_lr=lr), small_spec).payload))
    np.testing.assert_allclose(payloads[0], payloads[1], atol=1e-12)


def test_standin_payload_and_private_moment(small_spec, small_params, shard):
    client = ClientState(client_id=0, inputs=shard[0], labels=shard[1])
    cfg = RoundConfig(transform=TransformKind.standin(), local_iterations=3, batch_size=4)
    sent = local_round(client, small_params, cfg, small_spec)
    assert np.all(np.abs(flatten(sent.payload)) < 1.0)
    for _ in range(2):
        local_round(client, small_params, cfg, small_spec)
    assert client.moment.r == 3
    assert set(sent._fields) == {"client_id", "sample_count", "payload"}


def test_noise_payload_is_seeded_per_round(small_spec, small_params, shard):
    cfg = RoundConfig(transform=TransformKind.gaussian_noise(0.1), batch_size=12)
    first = ClientState(client_id=0, inputs=shard[0], labels=shard[1], seed=5)
    second = ClientState(client_id=0, inputs=shard[0], labels=shard[1], seed=5)
    a = flatten(local_round(first, small_params, cfg, small_spec).payload)
    b = flatten(local_round(second, small_params, cfg, small_spec).payload)
    np.testing.assert_array_equal(a, b)
    c = flatten(local_round(first, small_params, cfg, small_spec).payload)
    assert not np.array_equal(a, c)


def test_aggregate_examples():
    single = aggregate([message(0, [1.0, 2.0])])
    np.testing.assert_array_equal(single[0].weight, [[1.0]])
    cancelled = aggregate([message(0, [1.5, -2.0]), message(1, [-1.5, 2.0])])
    np.testing.assert_array_equal(flatten(cancelled), [0.0, 0.0])


def test_aggregate_order_is_fixed(rng):
    messages = [message(i, rng.standard_normal(2)) for i in range(7)]
    reference = flatten(aggregate(messages))
    for _ in range(20):
        shuffled = [messages[i] for i in rng.permutation(7)]
        assert np.array_equal(flatten(aggregate(shuffled)), reference)


def test_aggregate_errors():
    with pytest.raises(ValueError, match="empty"):
        aggregate([])
    with pytest.raises(ValueError, match="Repeated client ids"):
        aggregate([message(0, [1.0, 1.0]), message(0, [1.0, 1.0])])
    with pytest.raises(ValueError, match="Unequal shard sizes"):
        aggregate([message(0, [1.0, 1.0]), message(1, [1.0, 1.0], count=3)])


def test_apply_global_update():
    params = (Layer(weight=np.array([[0.5, 1.0]]), bias=np.array([2.0])),)
    agg = (Layer(weight=np.ones((1, 2)), bias=np.ones(1)),)
    unchanged = apply_global_update(params, agg, RoundConfig(server_lr=0.0))
    np.testing.assert_array_equal(unchanged[0].weight, params[0].weight)
    stepped = apply_global_update(params, agg, RoundConfig(server_lr=0.1))
    np.testing.assert_allclose(flatten(stepped), [0.4, 0.9, 1.9])


def test_single_client_matches_centralized_sgd(small_spec, shard):
    clients = make_clients(*shard, 1, seed=0)
    cfg = RoundConfig(batch_size=12, local_lr=0.2, server_lr=0.2)
    federated = run_federation(clients, small_spec, cfg, rounds=20, init_seed=4)
    centralized = train_centralized(small_spec, *shard, steps=20, lr=0.2, init_seed=4)
    np.testing.assert_allclose(flatten(federated.params), flatten(centralized.params), atol=1e-12)


def test_history_shape(small_spec, shard):
    history = run_federation(make_clients(*shard, 2, seed=0), small_spec, RoundConfig(), rounds=1)
    assert isinstance(history.records, pd.DataFrame)
    assert list(history.records.columns) == HISTORY_COLUMNS
    assert len(history.records) == 1
    assert np.isnan(history.records["test_accuracy"].iloc[0])


def test_threads_do_not_change_results(small_spec, shard):
    cfg = RoundConfig(transform=TransformKind.standin(), batch_size=2, local_iterations=2)
    runs = [
        run_federation(make_clients(*shard, 3, seed=1), small_spec, cfg, rounds=4, threads=threads)
        for threads in (1, 3)
    ]
    pd.testing.assert_frame_equal(runs[0].records, runs[1].records)
    assert np.array_equal(flatten(runs[0].params), flatten(runs[1].params))


def test_run_federation_errors(small_spec, shard):
    with pytest.raises(ValueError, match="rounds"):
        run_federation(make_clients(*shard, 2, seed=0), small_spec, RoundConfig(), rounds=0)
    unequal = [
        ClientState(client_id=0, inputs=np.ones((2, 4)), labels=[0, 1]),
        ClientState(client_id=1, inputs=np.ones((3, 4)), labels=[0, 1, 0]),
    ]
    with pytest.raises(ValueError, match="equal size"):
        run_federation(unequal, small_spec, RoundConfig(), rounds=1)


def test_centralized_history(small_spec, shard):
    history = train_centralized(
        small_spec, *shard, steps=3, lr=0.1, batch_size=4, test_set=shard
    )
    assert list(history.records["round"]) == [1, 2, 3]
    assert history.records["test_accuracy"].between(0, 1).all()
    start = init_params(small_spec, 0)
    assert not np.array_equal(flatten(start), flatten(history.params))
