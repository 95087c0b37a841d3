"""The two propagation-graph classifiers and their training loop.

A GCN propagates features through the normalized self-looped adjacency;
a GAT scores each node against its in-neighbourhood (self, parent,
children) with multi-head attention. Either stack is followed by mean
pooling over nodes and a small MLP head. Batches of graphs run as one
block-diagonal disjoint union on a single tape.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import SCHEME_VALUES, AdjacencyStructure, Thread, build_propagation_graph
from .features import assemble_feature_matrix, derive_seed
from .nn_core import AdamState, Node, ShapeError, Tape, adam_step, read_ckpt, write_ckpt

GCN = "gcn"
GAT = "gat"
DIRECTED = "directed"
SYMMETRIZED = "symmetrized"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    weight_decay: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 4
    mlp_hidden: int = 32
    leaky_slope: float = 0.2
    adjacency: str = DIRECTED
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "weight_decay", "batch_size", "epochs", "hidden_dim",
                     "layers", "heads", "mlp_hidden"):
            if getattr(self, name) < (0 if name in ("epochs", "weight_decay") else 1e-12):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.adjacency not in (DIRECTED, SYMMETRIZED):
            raise ValueError(f"adjacency must be directed or symmetrized, got {self.adjacency!r}")
        if self.hidden_dim % self.heads != 0:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Graph matrices


def adjacency_dense(structure: AdjacencyStructure) -> np.ndarray:
    a = np.zeros((structure.n, structure.n), dtype=np.float64)
    for p, c in structure.edges:
        a[p, c] = 1.0
    return a


def normalize_adjacency(structure: AdjacencyStructure, mode: str = DIRECTED) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2} with D the row sums of the self-looped matrix.

    `directed` keeps top-down edges only; `symmetrized` folds in the
    reversed edges first.
    """
    a = adjacency_dense(structure)
    if mode == SYMMETRIZED:
        a = np.minimum(a + a.T, 1.0)
    elif mode != DIRECTED:
        raise ValueError(f"unknown adjacency mode {mode!r}")
    a_hat = a + np.eye(structure.n)
    d = a_hat.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]


def attention_mask(structure: AdjacencyStructure) -> np.ndarray:
    """In-neighbourhood mask: self plus parent plus children."""
    a = adjacency_dense(structure)
    return ((a + a.T + np.eye(structure.n)) > 0).astype(np.float64)


def pool_graph(h: np.ndarray) -> np.ndarray:
    """Column-wise mean over nodes: one embedding per graph."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ShapeError(f"pool_graph needs a non-empty 2-D matrix, got {h.shape}")
    return h.mean(axis=0)


def block_diagonal(mats: list[np.ndarray]) -> np.ndarray:
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n), dtype=np.float64)
    off = 0
    for m in mats:
        k = m.shape[0]
        out[off:off + k, off:off + k] = m
        off += k
    return out


def pooling_matrix(sizes: list[int]) -> np.ndarray:
    """(B x N_total) constant: row b averages graph b's node block."""
    total = sum(sizes)
    out = np.zeros((len(sizes), total), dtype=np.float64)
    off = 0
    for b, k in enumerate(sizes):
        out[b, off:off + k] = 1.0 / k
        off += k
    return out


# ---------------------------------------------------------------------------
# Parameters


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _gat_layer_dims(in_dim: int, config: TrainConfig) -> list[tuple[int, int]]:
    """(input width, per-head output width) per layer; last layer averages heads."""
    dims = []
    width = in_dim
    for layer in range(config.layers):
        final = layer == config.layers - 1
        head_out = config.hidden_dim if final else config.hidden_dim // config.heads
        dims.append((width, head_out))
        width = config.hidden_dim
    return dims


def init_params(kind: str, in_dim: int, classes: int, config: TrainConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(
        (derive_seed("init", kind), config.seed & 0xFFFFFFFFFFFFFFFF)))
    params: dict[str, np.ndarray] = {}
    if kind == GCN:
        width = in_dim
        for layer in range(config.layers):
            params[f"gcn.l{layer}.w"] = _glorot(rng, width, config.hidden_dim)
            width = config.hidden_dim
    elif kind == GAT:
        for layer, (w_in, head_out) in enumerate(_gat_layer_dims(in_dim, config)):
            for head in range(config.heads):
                params[f"gat.l{layer}.h{head}.w"] = _glorot(rng, w_in, head_out)
                params[f"gat.l{layer}.h{head}.a"] = _glorot(rng, 2 * head_out, 1)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    params["mlp.w0"] = _glorot(rng, config.hidden_dim, config.mlp_hidden)
    params["mlp.b0"] = np.zeros((1, config.mlp_hidden))
    params["mlp.w1"] = _glorot(rng, config.mlp_hidden, classes)
    params["mlp.b1"] = np.zeros((1, classes))
    return params


# ---------------------------------------------------------------------------
# Forward passes (tape-recorded, batched by block-diagonal composition)


def _mlp(tape: Tape, pooled: Node, nodes: dict[str, Node]) -> Node:
    h = tape.relu(tape.add(tape.matmul(pooled, nodes["mlp.w0"]), nodes["mlp.b0"]))
    return tape.add(tape.matmul(h, nodes["mlp.w1"]), nodes["mlp.b1"])


def _gcn_stack(tape: Tape, feats: Node, norm_a: Node, nodes: dict[str, Node],
               config: TrainConfig) -> Node:
    h = feats
    for layer in range(config.layers):
        h = tape.relu(tape.matmul(tape.matmul(norm_a, h), nodes[f"gcn.l{layer}.w"]))
    return h


def _gat_stack(tape: Tape, feats: Node, mask: np.ndarray, nodes: dict[str, Node],
               config: TrainConfig) -> Node:
    n = feats.shape[0]
    ones_row = tape.constant(np.ones((1, n)))
    ones_col = tape.constant(np.ones((n, 1)))
    h = feats
    for layer in range(config.layers):
        final = layer == config.layers - 1
        head_outs = []
        for head in range(config.heads):
            w = nodes[f"gat.l{layer}.h{head}.w"]
            a = nodes[f"gat.l{layer}.h{head}.a"]
            d = w.shape[1]
            sel_src = tape.constant(np.hstack([np.eye(d), np.zeros((d, d))]))
            sel_dst = tape.constant(np.hstack([np.zeros((d, d)), np.eye(d)]))
            z = tape.matmul(h, w)
            s = tape.matmul(z, tape.matmul(sel_src, a))
            t = tape.matmul(z, tape.matmul(sel_dst, a))
            scores = tape.add(tape.matmul(s, ones_row), tape.matmul(ones_col, tape.transpose(t)))
            alpha = tape.masked_row_softmax(tape.leaky_relu(scores, config.leaky_slope), mask)
            head_outs.append(tape.matmul(alpha, z))
        if final:
            total = head_outs[0]
            for extra in head_outs[1:]:
                total = tape.add(total, extra)
            h = tape.relu(tape.scale(total, 1.0 / config.heads))
        else:
            h = tape.relu(tape.concat_cols(head_outs))
    return h


def build_logits(tape: Tape, kind: str, feats: np.ndarray, graph_mat: np.ndarray,
                 pool: np.ndarray, params: dict[str, np.ndarray],
                 config: TrainConfig) -> tuple[Node, dict[str, Node]]:
    """Record the full forward pass; graph_mat is normA (gcn) or mask (gat)."""
    nodes = {name: tape.param(value) for name, value in sorted(params.items())}
    f_node = tape.constant(feats)
    if kind == GCN:
        h = _gcn_stack(tape, f_node, tape.constant(graph_mat), nodes, config)
    elif kind == GAT:
        h = _gat_stack(tape, f_node, graph_mat, nodes, config)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    pooled = tape.matmul(tape.constant(pool), h)
    return _mlp(tape, pooled, nodes), nodes


def gcn_forward(feats: np.ndarray, norm_a: np.ndarray, params: dict[str, np.ndarray],
                config: TrainConfig = TrainConfig()) -> np.ndarray:
    """Logits for one graph: L propagation layers, mean pool, MLP head."""
    pool = pooling_matrix([feats.shape[0]])
    tape = Tape()
    logits, _ = build_logits(tape, GCN, feats, norm_a, pool, params, config)
    return tape.value(logits)[0]


def gat_forward(feats: np.ndarray, structure: AdjacencyStructure,
                params: dict[str, np.ndarray], config: TrainConfig = TrainConfig()) -> np.ndarray:
    """Logits for one graph via multi-head neighbourhood attention."""
    pool = pooling_matrix([feats.shape[0]])
    tape = Tape()
    logits, _ = build_logits(tape, GAT, feats, attention_mask(structure), pool, params, config)
    return tape.value(logits)[0]


# ---------------------------------------------------------------------------
# Training


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class GraphInstance:
    feats: np.ndarray
    graph_mat: np.ndarray
    label: int


def _prepare(kind: str, threads: list[Thread], provider, config: TrainConfig,
             alias_table=None) -> list[GraphInstance]:
    out = []
    for t in threads:
        structure = build_propagation_graph(t)
        feats = assemble_feature_matrix(t, provider, alias_table)
        mat = normalize_adjacency(structure, config.adjacency) if kind == GCN \
            else attention_mask(structure)
        out.append(GraphInstance(feats, mat, t.label.index))
    return out


def _batch_logits(tape: Tape, kind: str, batch: list[GraphInstance],
                  params: dict[str, np.ndarray], config: TrainConfig) -> tuple[Node, dict[str, Node]]:
    feats = np.vstack([g.feats for g in batch])
    graph = block_diagonal([g.graph_mat for g in batch])
    pool = pooling_matrix([g.feats.shape[0] for g in batch])
    return build_logits(tape, kind, feats, graph, pool, params, config)


def train(kind: str, train_threads: list[Thread], provider, config: TrainConfig,
          alias_table=None) -> tuple[dict[str, np.ndarray], list[EpochStats]]:
    """Seeded mini-batch training; returns final parameters and per-epoch stats.

    Threads are shuffled each epoch, gradients averaged per batch through a
    shared tape, and parameters updated with Adam. Loss and accuracy in the
    history are running (pre-update) values over the epoch's batches.
    """
    if not train_threads:
        raise ValueError("train_threads is empty")
    scheme = train_threads[0].label.scheme
    classes = len(SCHEME_VALUES[scheme])
    instances = _prepare(kind, train_threads, provider, config, alias_table)
    params = init_params(kind, instances[0].feats.shape[1], classes, config)
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    history: list[EpochStats] = []
    n = len(instances)
    for epoch in range(config.epochs):
        rng = np.random.default_rng(np.random.SeedSequence(
            (derive_seed("shuffle", epoch), config.seed & 0xFFFFFFFFFFFFFFFF)))
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            batch = [instances[i] for i in order[start:start + config.batch_size]]
            labels = np.array([g.label for g in batch])
            tape = Tape()
            try:
                logits, nodes = _batch_logits(tape, kind, batch, params, config)
                loss = tape.cross_entropy(logits, labels)
                tape.backward(loss)
            except FloatingPointError as exc:
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} batch {start // config.batch_size}: {exc}")
            grads = {name: tape.grad(node) for name, node in nodes.items()}
            total_loss += float(tape.value(loss)[0, 0]) * len(batch)
            correct += int((tape.value(logits).argmax(axis=1) == labels).sum())
            params = adam_step(params, grads, state)
        history.append(EpochStats(epoch, total_loss / n, correct / n))
    return params, history


def predict(kind: str, threads: list[Thread], provider, params: dict[str, np.ndarray],
            config: TrainConfig, alias_table=None, n_threads: int = 1,
            chunk_size: int = 64) -> np.ndarray:
    """Predicted class indices, thread order preserved."""
    instances = _prepare(kind, threads, provider, config, alias_table)
    chunks = [instances[i:i + chunk_size] for i in range(0, len(instances), chunk_size)]

    def run(chunk: list[GraphInstance]) -> np.ndarray:
        tape = Tape()
        logits, _ = _batch_logits(tape, kind, chunk, params, config)
        return tape.value(logits).argmax(axis=1)

    if n_threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# Checkpoint + sidecar


def save_model(path, kind: str, params: dict[str, np.ndarray], config: TrainConfig,
               scheme: str, in_dim: int) -> None:
    path = Path(path)
    write_ckpt(path, params)
    sidecar = {
        "model_kind": kind,
        "scheme": scheme,
        "in_dim": in_dim,
        "classes": len(SCHEME_VALUES[scheme]),
        "config": asdict(config),
        "config_hash": config_hash(config),
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> tuple[str, dict[str, np.ndarray], TrainConfig, dict]:
    path = Path(path)
    params = read_ckpt(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    config = TrainConfig(**meta["config"])
    return meta["model_kind"], params, config, meta
