"""GCN/GAT forward passes, batching, training loop, checkpoint sidecars."""

import filecmp
import math

import numpy as np
import pytest

import oracles
from helpers import thread
from threadforge.data import AdjacencyStructure, build_propagation_graph
from threadforge.features import HashEmbedding
from threadforge.models import (DIRECTED, GAT, GCN, SYMMETRIZED, TrainConfig,
                                adjacency_dense, attention_mask, block_diagonal,
                                build_logits, config_hash, gat_forward,
                                gcn_forward, init_params, load_model,
                                normalize_adjacency, pool_graph, pooling_matrix,
                                predict, save_model, train)
from threadforge.nn_core import Tape
from threadforge.synth import make_separable

SMALL = TrainConfig(hidden_dim=8, heads=2, mlp_hidden=4)


def chain(n):
    return AdjacencyStructure(n, tuple((i, i + 1) for i in range(n - 1)), tuple(range(n)))


def star(n):
    return AdjacencyStructure(n, tuple((0, i) for i in range(1, n)), tuple(range(n)))


def random_structure(rng, n):
    edges = tuple((int(rng.integers(0, i)), i) for i in range(1, n))
    return AdjacencyStructure(n, edges, tuple(range(n)))


# -- graph matrices ---------------------------------------------------------------

def test_normalize_adjacency_chain_example():
    got = normalize_adjacency(chain(2))
    want = [[0.5, 1 / math.sqrt(2)], [0.0, 1.0]]
    assert np.allclose(got, want, atol=1e-12)


def test_normalize_adjacency_star_example():
    got = normalize_adjacency(star(4))
    assert np.allclose(got[0], [0.25, 0.5, 0.5, 0.5], atol=1e-12)
    assert np.allclose(np.diag(got)[1:], 1.0)


def test_normalize_adjacency_symmetrized():
    got = normalize_adjacency(chain(2), SYMMETRIZED)
    assert np.allclose(got, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)


def test_normalize_adjacency_matches_oracle():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = int(rng.integers(1, 7))
        s = random_structure(rng, n)
        for mode in (DIRECTED, SYMMETRIZED):
            got = normalize_adjacency(s, mode)
            want = oracles.norm_adjacency(n, s.edges, mode)
            assert np.allclose(got, want, atol=1e-14)


def test_normalize_adjacency_rejects_mode():
    with pytest.raises(ValueError, match="sideways"):
        normalize_adjacency(chain(2), "sideways")


def test_attention_mask_neighbourhood():
    got = attention_mask(chain(3))
    want = [[1, 1, 0], [1, 1, 1], [0, 1, 1]]
    assert got.tolist() == want


def test_adjacency_dense_single_node():
    assert adjacency_dense(chain(1)).tolist() == [[0.0]]
    assert normalize_adjacency(chain(1)).tolist() == [[1.0]]
    assert attention_mask(chain(1)).tolist() == [[1.0]]


def test_pool_graph_mean():
    h = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert pool_graph(h).tolist() == [2.0, 3.0]
    with pytest.raises(Exception):
        pool_graph(np.zeros((0, 2)))


def test_pooling_matrix_blocks():
    got = pooling_matrix([2, 3])
    want = [[0.5, 0.5, 0, 0, 0], [0, 0, 1 / 3, 1 / 3, 1 / 3]]
    assert np.allclose(got, want)


def test_block_diagonal():
    got = block_diagonal([np.ones((1, 1)), 2 * np.ones((2, 2))])
    want = [[1, 0, 0], [0, 2, 2], [0, 2, 2]]
    assert got.tolist() == want


# -- parameter init --------------------------------------------------------------

def test_init_shapes_gcn():
    p = init_params(GCN, 5, 3, SMALL)
    assert p["gcn.l0.w"].shape == (5, 8)
    assert p["gcn.l1.w"].shape == (8, 8)
    assert p["mlp.w0"].shape == (8, 4)
    assert p["mlp.b0"].shape == (1, 4)
    assert p["mlp.w1"].shape == (4, 3)
    assert p["mlp.b1"].shape == (1, 3)


def test_init_shapes_gat():
    p = init_params(GAT, 5, 2, SMALL)
    # hidden layer: per-head width hidden/heads; final layer: full hidden per head
    assert p["gat.l0.h0.w"].shape == (5, 4)
    assert p["gat.l0.h0.a"].shape == (8, 1)
    assert p["gat.l1.h1.w"].shape == (8, 8)
    assert p["gat.l1.h1.a"].shape == (16, 1)
    assert p["mlp.w0"].shape == (8, 4)


def test_init_deterministic_and_kind_separated():
    a = init_params(GCN, 5, 2, SMALL)
    b = init_params(GCN, 5, 2, SMALL)
    c = init_params(GCN, 5, 2, TrainConfig(hidden_dim=8, heads=2, mlp_hidden=4, seed=1))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["gcn.l0.w"], c["gcn.l0.w"])
    gat = init_params(GAT, 5, 2, SMALL)
    assert not np.array_equal(a["mlp.w0"], gat["mlp.w0"])


def test_init_rejects_unknown_kind():
    with pytest.raises(ValueError, match="mlp"):
        init_params("mlp", 5, 2, SMALL)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(hidden_dim=10, heads=4)  # not divisible
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(adjacency="loopy")
    assert TrainConfig(epochs=0).epochs == 0
    assert TrainConfig(weight_decay=0.0).weight_decay == 0.0


def test_config_hash_sensitivity():
    a = config_hash(TrainConfig())
    assert a == config_hash(TrainConfig())
    assert a != config_hash(TrainConfig(seed=1))
    assert len(a) == 64 and set(a) <= set("0123456789abcdef")


# -- oracle equivalence ------------------------------------------------------------

def test_gcn_matches_oracle():
    rng = np.random.default_rng(1)
    for trial in range(25):
        n = int(rng.integers(1, 7))
        s = random_structure(rng, n)
        feats = rng.normal(size=(n, 5))
        params = init_params(GCN, 5, 3, SMALL)
        got = gcn_forward(feats, normalize_adjacency(s, SMALL.adjacency), params, SMALL)
        want = oracles.gcn_logits(feats, n, s.edges, params, SMALL.layers)
        assert np.allclose(got, want, atol=1e-10)


def test_gat_matches_oracle():
    rng = np.random.default_rng(2)
    for trial in range(25):
        n = int(rng.integers(1, 7))
        s = random_structure(rng, n)
        feats = rng.normal(size=(n, 5))
        params = init_params(GAT, 5, 3, SMALL)
        got = gat_forward(feats, s, params, SMALL)
        want = oracles.gat_logits(feats, n, s.edges, params, SMALL.layers, SMALL.heads,
                                  SMALL.leaky_slope)
        assert np.allclose(got, want, atol=1e-10)


def test_single_node_identities():
    feats = np.array([[1.0, -2.0, 0.5, 3.0, 0.0]])
    s = chain(1)
    params = init_params(GCN, 5, 2, SMALL)
    # one node: normA is [[1]], so the stack is plain dense layers
    h = feats
    for layer in range(SMALL.layers):
        h = np.maximum(h @ params[f"gcn.l{layer}.w"], 0.0)
    pooled = h
    m = np.maximum(pooled @ params["mlp.w0"] + params["mlp.b0"], 0.0)
    want = (m @ params["mlp.w1"] + params["mlp.b1"])[0]
    got = gcn_forward(feats, normalize_adjacency(s), params, SMALL)
    assert np.allclose(got, want, atol=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    n = 6
    s = random_structure(rng, n)
    feats = rng.normal(size=(n, 5))
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    permuted = AdjacencyStructure(
        n, tuple((int(inv[p]), int(inv[c])) for p, c in s.edges), tuple(range(n)))
    pf = feats[perm]
    for kind in (GCN, GAT):
        params = init_params(kind, 5, 3, SMALL)
        if kind == GCN:
            a = gcn_forward(feats, normalize_adjacency(s), params, SMALL)
            b = gcn_forward(pf, normalize_adjacency(permuted), params, SMALL)
        else:
            a = gat_forward(feats, s, params, SMALL)
            b = gat_forward(pf, permuted, params, SMALL)
        assert np.allclose(a, b, atol=1e-10)


def test_batch_matches_single_graph():
    rng = np.random.default_rng(4)
    structures = [random_structure(rng, k) for k in (1, 3, 5)]
    feats = [rng.normal(size=(s.n, 5)) for s in structures]
    for kind in (GCN, GAT):
        params = init_params(kind, 5, 2, SMALL)
        if kind == GCN:
            mats = [normalize_adjacency(s, SMALL.adjacency) for s in structures]
            singles = [gcn_forward(f, m, params, SMALL) for f, m in zip(feats, mats)]
        else:
            mats = [attention_mask(s) for s in structures]
            singles = [gat_forward(f, s, params, SMALL) for f, s in zip(feats, structures)]
        tape = Tape()
        logits, _ = build_logits(
            tape, kind, np.vstack(feats), block_diagonal(mats),
            pooling_matrix([f.shape[0] for f in feats]), params, SMALL)
        assert np.allclose(tape.value(logits), np.vstack(singles), atol=1e-10)


# -- end-to-end gradients -------------------------------------------------------------

@pytest.mark.parametrize("kind", [GCN, GAT])
def test_end_to_end_gradcheck(kind):
    rng = np.random.default_rng(5)
    structures = [random_structure(rng, 3), random_structure(rng, 4)]
    feats = [rng.normal(size=(s.n, 4)) for s in structures]
    labels = np.array([0, 1])
    params = init_params(kind, 4, 2, SMALL)
    if kind == GCN:
        mats = [normalize_adjacency(s, SMALL.adjacency) for s in structures]
    else:
        mats = [attention_mask(s) for s in structures]
    stacked = np.vstack(feats)
    graph = block_diagonal(mats)
    pool = pooling_matrix([f.shape[0] for f in feats])

    def loss_fn(ps):
        t = Tape()
        logits, _ = build_logits(t, kind, stacked, graph, pool, ps, SMALL)
        return float(t.value(t.cross_entropy(logits, labels))[0, 0])

    tape = Tape()
    logits, nodes = build_logits(tape, kind, stacked, graph, pool, params, SMALL)
    tape.backward(tape.cross_entropy(logits, labels))
    got = {name: tape.grad(node) for name, node in nodes.items()}
    want = oracles.finite_diff(loss_fn, params)
    assert oracles.max_rel_err(got, want) < 1e-4


# -- training loop ----------------------------------------------------------------------

def small_dataset(n=40, seed=0):
    d = make_separable(n_threads=n, n_events=2, seed=seed)
    return list(d.all_threads())


@pytest.mark.parametrize("kind", [GCN, GAT])
def test_training_reduces_loss(kind):
    threads = small_dataset()
    provider = HashEmbedding(dim=16)
    config = TrainConfig(hidden_dim=8, heads=2, mlp_hidden=4, epochs=20,
                         batch_size=16, seed=0, lr=2e-2)
    params, history = train(kind, threads, provider, config)
    assert len(history) == 20
    assert [h.epoch for h in history] == list(range(20))
    first = np.mean([h.loss for h in history[:5]])
    last = np.mean([h.loss for h in history[-5:]])
    assert last < first
    assert history[-1].accuracy == 1.0


def test_training_epochs_zero_returns_init():
    threads = small_dataset(10)
    provider = HashEmbedding(dim=16)
    config = TrainConfig(hidden_dim=8, heads=2, mlp_hidden=4, epochs=0)
    params, history = train(GCN, threads, provider, config)
    assert history == []
    want = init_params(GCN, 16 + 4, len({t.label.value for t in threads}), config)
    assert all(np.array_equal(params[k], want[k]) for k in params)


def test_training_deterministic():
    threads = small_dataset(12)
    provider = HashEmbedding(dim=16)
    config = TrainConfig(hidden_dim=8, heads=2, mlp_hidden=4, epochs=3,
                         batch_size=5, seed=7)
    p1, h1 = train(GCN, threads, provider, config)
    p2, h2 = train(GCN, threads, provider, config)
    assert h1 == h2
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)


def test_training_seed_changes_result():
    threads = small_dataset(12)
    provider = HashEmbedding(dim=16)
    base = dict(hidden_dim=8, heads=2, mlp_hidden=4, epochs=2, batch_size=5)
    p1, _ = train(GCN, threads, provider, TrainConfig(seed=0, **base))
    p2, _ = train(GCN, threads, provider, TrainConfig(seed=1, **base))
    assert any(not np.array_equal(p1[k], p2[k]) for k in p1)


def test_training_empty_raises():
    with pytest.raises(ValueError, match="empty"):
        train(GCN, [], HashEmbedding(dim=8), TrainConfig())


@pytest.mark.filterwarnings("ignore:overflow")
def test_training_divergence_reports_location():
    threads = small_dataset(8)
    provider = HashEmbedding(dim=16)
    config = TrainConfig(hidden_dim=8, heads=2, mlp_hidden=4, epochs=3,
                         batch_size=8, lr=1e200, weight_decay=0.0)
    with pytest.raises(RuntimeError, match=r"epoch \d+ batch \d+"):
        train(GCN, threads, provider, config)


def test_predict_order_and_parallel():
    threads = small_dataset(20)
    provider = HashEmbedding(dim=16)
    config = TrainConfig(hidden_dim=8, heads=2, mlp_hidden=4, epochs=2, seed=0)
    params, _ = train(GCN, threads, provider, config)
    serial = predict(GCN, threads, provider, params, config, chunk_size=3)
    parallel = predict(GCN, threads, provider, params, config, n_threads=4, chunk_size=3)
    assert serial.tolist() == parallel.tolist()
    assert len(serial) == len(threads)
    assert predict(GCN, [], provider, params, config).tolist() == []


# -- persistence ----------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    params = init_params(GAT, 10, 2, SMALL)
    path = tmp_path / "model.ckpt"
    save_model(path, GAT, params, SMALL, "binary", 10)
    kind, back, config, meta = load_model(path)
    assert kind == GAT
    assert config == SMALL
    assert meta["scheme"] == "binary" and meta["in_dim"] == 10 and meta["classes"] == 2
    assert meta["config_hash"] == config_hash(SMALL)
    assert sorted(back) == sorted(params)
    assert all(np.array_equal(back[k], params[k]) for k in params)


def test_train_twice_writes_identical_checkpoints(tmp_path):
    threads = small_dataset(10)
    provider = HashEmbedding(dim=16)
    config = TrainConfig(hidden_dim=8, heads=2, mlp_hidden=4, epochs=2, seed=3)
    for name in ("a.ckpt", "b.ckpt"):
        params, _ = train(GCN, threads, provider, config)
        save_model(tmp_path / name, GCN, params, config, "binary", 20)
    assert filecmp.cmp(tmp_path / "a.ckpt", tmp_path / "b.ckpt", shallow=False)
    assert (tmp_path / "a.ckpt.json").read_bytes() == (tmp_path / "b.ckpt.json").read_bytes()


# -- feature plumbing through real threads ------------------------------------------------

def test_forward_on_real_thread():
    t = thread("t1", "ev", "rumour", ("the quick fox", "jumps over", "the lazy dog"))
    s = build_propagation_graph(t)
    provider = HashEmbedding(dim=12)
    from threadforge.features import assemble_feature_matrix
    feats = assemble_feature_matrix(t, provider)
    assert feats.shape == (3, 16)
    params = init_params(GCN, 16, 2, SMALL)
    out = gcn_forward(feats, normalize_adjacency(s), params, SMALL)
    assert out.shape == (2,)
    assert np.isfinite(out).all()
