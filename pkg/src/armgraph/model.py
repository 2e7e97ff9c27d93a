"""Mean-field structure2vec graph classifier in plain numpy.

Forward pass for a graph with one-hot node features ``x_v``::

    mu_v^0 = 0
    mu_v^t = relu(W_node x_v + W_msg * sum_{u in N(v)} mu_u^{t-1})   t = 1..max_lv
    g      = relu(W_out * sum_v mu_v^max_lv + b_out)
    h      = relu(W_h g + b_h)
    p      = softmax(W_c h + b_c)

Gradients are derived by hand and checked against finite differences in
the test suite. Everything is float64.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    CheckpointError,
    EmptyDataset,
    NonFiniteLoss,
    ShapeMismatch,
    TagOutOfRange,
)

logger = logging.getLogger(__name__)

PROB_EPS = 1e-15
CHECKPOINT_MAGIC = b"ARMGRAPH-S2V"
CHECKPOINT_VERSION = 1


@dataclass
class Hyperparams:
    gm: str = "mean_field"
    batch_size: int = 50
    seed: int = 1
    feat_dim: int = 0
    num_class: int = 0
    num_epochs: int = 1000
    latent_dim: int = 64
    out_dim: int = 1024
    hidden: int = 100
    max_lv: int = 4
    learning_rate: float = 0.0001
    train_fraction: float = 0.8
    optimizer: str = "adam"
    mode: str = "cpu"

    def __post_init__(self):
        if self.gm != "mean_field":
            raise NotImplementedError(f"gm={self.gm!r} is not implemented; only mean_field")
        for name in ("batch_size", "latent_dim", "out_dim", "hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("feat_dim", "num_class", "num_epochs", "max_lv"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.mode not in ("cpu", "gpu"):
            raise ValueError(f"unknown mode {self.mode!r}")


PARAM_NAMES = ("W_node", "W_msg", "W_out", "b_out", "W_h", "b_h", "W_c", "b_c")


@dataclass
class ModelParams:
    W_node: np.ndarray  # latent x feat
    W_msg: np.ndarray   # latent x latent
    W_out: np.ndarray   # out x latent
    b_out: np.ndarray
    W_h: np.ndarray     # hidden x out
    b_h: np.ndarray
    W_c: np.ndarray     # class x hidden
    b_c: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> ModelParams:
        return ModelParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> ModelParams:
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))

    @property
    def feat_dim(self) -> int:
        return self.W_node.shape[1]

    @property
    def num_class(self) -> int:
        return self.W_c.shape[0]

    def check(self):
        latent, feat = self.W_node.shape
        out = self.W_out.shape[0]
        hidden = self.W_h.shape[0]
        ncls = self.W_c.shape[0]
        expected = {
            "W_node": (latent, feat), "W_msg": (latent, latent),
            "W_out": (out, latent), "b_out": (out,),
            "W_h": (hidden, out), "b_h": (hidden,),
            "W_c": (ncls, hidden), "b_c": (ncls,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    def __eq__(self, other):
        return isinstance(other, ModelParams) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def zero_params(feat_dim, num_class, latent_dim=64, out_dim=1024, hidden=100) -> ModelParams:
    return ModelParams(
        np.zeros((latent_dim, feat_dim)), np.zeros((latent_dim, latent_dim)),
        np.zeros((out_dim, latent_dim)), np.zeros(out_dim),
        np.zeros((hidden, out_dim)), np.zeros(hidden),
        np.zeros((num_class, hidden)), np.zeros(num_class))


def init_params(hp: Hyperparams, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    if hp.feat_dim < 1 or hp.num_class < 1:
        raise ShapeMismatch("feat_dim and num_class must be resolved before initialisation")

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    L, F, O, H, C = hp.latent_dim, hp.feat_dim, hp.out_dim, hp.hidden, hp.num_class
    return ModelParams(
        uniform((L, F), F), uniform((L, L), L),
        uniform((O, L), L), uniform(O, L),
        uniform((H, O), O), uniform(H, O),
        uniform((C, H), H), uniform(C, H))


def one_hot(tag: int, feat_dim: int) -> np.ndarray:
    if not 0 <= tag <= feat_dim:
        raise TagOutOfRange(f"tag {tag} outside [0, {feat_dim}]")
    x = np.zeros(feat_dim)
    if tag:
        x[tag - 1] = 1.0
    return x


def adjacency(graph) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency; a self-loop puts 1 on the diagonal."""
    n = graph.n_nodes
    rows, cols = [], []
    for u, v in {(min(a, b), max(a, b)) for a, b in graph.edges}:
        rows.append(u)
        cols.append(v)
        if u != v:
            rows.append(v)
            cols.append(u)
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def _node_input(tags: np.ndarray, W_node: np.ndarray) -> np.ndarray:
    """Rows ``W_node @ one_hot(tag)`` for each node, without building one-hots."""
    out = np.zeros((len(tags), W_node.shape[0]))
    known = tags > 0
    out[known] = W_node[:, tags[known] - 1].T
    return out


def _tags_array(graph, feat_dim) -> np.ndarray:
    tags = np.asarray(graph.node_tags, dtype=np.int64)
    if tags.size and (tags.min() < 0 or tags.max() > feat_dim):
        raise TagOutOfRange(f"node tags must lie in [0, {feat_dim}]")
    return tags


def mean_field_embed(graph, params: ModelParams, max_lv: int, _trace=None) -> np.ndarray:
    """Node embeddings after ``max_lv`` rounds of mean-field message passing."""
    params.check()
    tags = _tags_array(graph, params.feat_dim)
    A = adjacency(graph)
    node_in = _node_input(tags, params.W_node)
    mu = np.zeros((graph.n_nodes, params.W_node.shape[0]))
    mus, pres = [mu], []
    for _ in range(max_lv):
        pre = node_in + (A @ mu) @ params.W_msg.T
        mu = np.maximum(pre, 0.0)
        pres.append(pre)
        mus.append(mu)
    if _trace is not None:
        _trace.update(tags=tags, A=A, mus=mus, pres=pres)
    return mu


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


@dataclass
class ForwardTrace:
    mus: list
    pres: list
    raw: np.ndarray
    g_pre: np.ndarray
    g: np.ndarray
    h_pre: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    p: np.ndarray
    tags: np.ndarray = field(repr=False)
    A: sp.csr_matrix = field(repr=False)


def classify(graph, params: ModelParams, max_lv: int) -> ForwardTrace:
    cache = {}
    mu = mean_field_embed(graph, params, max_lv, _trace=cache)
    raw = mu.sum(axis=0)
    g_pre = params.W_out @ raw + params.b_out
    g = np.maximum(g_pre, 0.0)
    h_pre = params.W_h @ g + params.b_h
    h = np.maximum(h_pre, 0.0)
    logits = params.W_c @ h + params.b_c
    return ForwardTrace(cache["mus"], cache["pres"], raw, g_pre, g, h_pre, h, logits,
                        softmax(logits), cache["tags"], cache["A"])


def loss(p, label: int) -> float:
    """Cross-entropy ``-log p[label]`` with p clamped away from zero."""
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise NonFiniteLoss(f"non-finite probabilities {p}")
    return float(-math.log(max(p[label], PROB_EPS)))


def logits_loss(logits: np.ndarray, label: int) -> float:
    """Same loss computed from logits via log-sum-exp; no clamping needed."""
    m = np.max(logits)
    value = float(m + math.log(np.exp(logits - m).sum()) - logits[label])
    if not math.isfinite(value):
        raise NonFiniteLoss(f"loss is {value} for logits {logits}")
    return value


def backward(trace: ForwardTrace, label: int, params: ModelParams, scale: float = 1.0,
             grads: ModelParams | None = None) -> ModelParams:
    """Gradient of ``scale * loss`` w.r.t. every parameter, accumulated into ``grads``."""
    if grads is None:
        grads = params.zeros_like()
    d_logits = trace.p.copy()
    d_logits[label] -= 1.0
    d_logits *= scale

    grads.W_c += np.outer(d_logits, trace.h)
    grads.b_c += d_logits
    d_h_pre = (params.W_c.T @ d_logits) * (trace.h_pre > 0)
    grads.W_h += np.outer(d_h_pre, trace.g)
    grads.b_h += d_h_pre
    d_g_pre = (params.W_h.T @ d_h_pre) * (trace.g_pre > 0)
    grads.W_out += np.outer(d_g_pre, trace.raw)
    grads.b_out += d_g_pre
    d_raw = params.W_out.T @ d_g_pre

    n = len(trace.tags)
    d_mu = np.broadcast_to(d_raw, (n, d_raw.size)).copy()
    known = trace.tags > 0
    cols = trace.tags[known] - 1
    for level in range(len(trace.pres), 0, -1):
        d_pre = d_mu * (trace.pres[level - 1] > 0)
        # W_node x_v only touches the column of v's tag
        np.add.at(grads.W_node.T, cols, d_pre[known])
        agg = trace.A @ trace.mus[level - 1]
        grads.W_msg += d_pre.T @ agg
        # A is symmetric, so A^T d_pre == A d_pre
        d_mu = trace.A @ (d_pre @ params.W_msg)
    return grads


def predict(graph, params: ModelParams, max_lv: int) -> tuple[int, np.ndarray]:
    """Most probable class (lowest index on ties) and the probabilities."""
    p = classify(graph, params, max_lv).p
    return int(np.argmax(p)), p


def resolve_dims(graphs, hp: Hyperparams) -> Hyperparams:
    """Fill in feat_dim / num_class left at 0 from the data."""
    feat_dim = hp.feat_dim or max((max(g.node_tags, default=0) for g in graphs), default=0)
    labels = {g.label for g in graphs}
    num_class = hp.num_class or max(len(labels), max(labels) + 1)
    return dataclasses.replace(hp, feat_dim=max(int(feat_dim), 1), num_class=int(num_class))


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)
    wall_time: float = 0.0

    def dumps(self) -> str:
        rows = ["epoch\tloss\taccuracy"]
        rows += [f"{i + 1}\t{l!r}\t{a!r}" for i, (l, a) in enumerate(zip(self.epoch_loss, self.epoch_accuracy))]
        rows.append(f"# wall_time\t{self.wall_time:.3f}")
        return "\n".join(rows) + "\n"


class _Adam:
    def __init__(self, params: ModelParams, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m.arrays(), self.v.arrays()):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params.arrays(), grads.arrays()):
            p -= self.lr * g


def train(graphs, hp: Hyperparams, labels=None) -> tuple[ModelParams, TrainReport, Hyperparams]:
    """Minibatch training. Returns ``(params, report, resolved_hyperparams)``.

    ``labels`` overrides the graphs' own labels and must be class indices.
    Deterministic for a given graph order, labels and hyperparameters.
    """
    graphs = list(graphs)
    if not graphs:
        raise EmptyDataset("cannot train on an empty dataset")
    if labels is None:
        labels = [g.label for g in graphs]
    labels = [int(y) for y in labels]
    hp = resolve_dims([dataclasses.replace(g, label=y) for g, y in zip(graphs, labels)], hp)
    if max(labels) >= hp.num_class or min(labels) < 0:
        raise ShapeMismatch(f"labels must lie in [0, {hp.num_class})")

    rng = np.random.default_rng(hp.seed)
    params = init_params(hp, rng)
    report = TrainReport()
    opt = _Adam(params, hp.learning_rate) if hp.optimizer == "adam" else _SGD(params, hp.learning_rate)
    start = time.perf_counter()

    for epoch in range(hp.num_epochs):
        order = rng.permutation(len(graphs))
        total_loss = 0.0
        correct = 0
        for b0 in range(0, len(order), hp.batch_size):
            batch = order[b0:b0 + hp.batch_size]
            grads = params.zeros_like()
            for i in batch:
                trace = classify(graphs[i], params, hp.max_lv)
                try:
                    total_loss += logits_loss(trace.logits, labels[i])
                except NonFiniteLoss as exc:
                    raise NonFiniteLoss(f"epoch {epoch + 1}, sample {i}: {exc}") from None
                correct += int(np.argmax(trace.p)) == labels[i]
                backward(trace, labels[i], params, 1.0 / len(batch), grads)
            opt.step(params, grads)
        report.epoch_loss.append(total_loss / len(graphs))
        report.epoch_accuracy.append(correct / len(graphs))
        logger.debug("epoch %d loss %.6f acc %.4f", epoch + 1, report.epoch_loss[-1], report.epoch_accuracy[-1])
    report.wall_time = time.perf_counter() - start
    return params, report, hp


# -- checkpoints -----------------------------------------------------------------

_HP_FIELDS = [f.name for f in dataclasses.fields(Hyperparams)]


def save_checkpoint(path, params: ModelParams, hp: Hyperparams):
    """Text header of hyperparameters, then each tensor as
    ``<u32 ndim> <u32 dims...> <float64 LE row-major values>``."""
    params.check()
    header = [f"{CHECKPOINT_MAGIC.decode()} {CHECKPOINT_VERSION}"]
    header += [f"{name}={getattr(hp, name)!r}" for name in _HP_FIELDS]
    blob = bytearray(("\n".join(header) + "\n\n").encode("ascii"))
    for arr in params.arrays():
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple[ModelParams, Hyperparams]:
    blob = Path(path).read_bytes()
    split = blob.find(b"\n\n")
    if not blob.startswith(CHECKPOINT_MAGIC) or split < 0:
        raise CheckpointError(f"{path}: not an armgraph checkpoint")
    lines = blob[:split].decode("ascii").split("\n")
    version = int(lines[0].split()[1])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    values = {}
    for line in lines[1:]:
        key, _, text = line.partition("=")
        if key not in _HP_FIELDS:
            raise CheckpointError(f"{path}: unknown header field {key!r}")
        values[key] = _literal(text)
    hp = Hyperparams(**values)

    pos = split + 2
    arrays = []
    try:
        for _ in PARAM_NAMES:
            (ndim,) = struct.unpack_from("<I", blob, pos)
            shape = struct.unpack_from(f"<{ndim}I", blob, pos + 4)
            pos += 4 + 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
            arrays.append(arr.astype(np.float64))
            pos += 8 * count
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated tensor data ({exc})") from None
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    params = ModelParams(*arrays)
    params.check()
    return params, hp


def _literal(text: str):
    if text.startswith("'") and text.endswith("'"):
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        return float(text)
