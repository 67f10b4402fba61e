"""A small frozen sequence classifier with input-embedding gradients.

This is the pretrained source model of the pipeline: trainable end to end on
a source task, then frozen. After freezing, only forward evaluation and
gradients with respect to the *input embeddings* are available; weights are
never mutated again (the arrays are made read-only).

Two architectures:
  bag_mlp - mean-pool embeddings -> tanh hidden layer -> linear head
  birnn   - single bidirectional tanh recurrence, concatenated final states
            -> linear head
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .numerics import as_matrix, cross_entropy, softmax

FORMAT_VERSION = 1


@dataclass(frozen=True)
class EmbeddingTable:
    """Column i is the embedding of source token i (d x vocab_size)."""

    table: np.ndarray

    @property
    def dim(self) -> int:
        return self.table.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.table.shape[1]


@dataclass(frozen=True)
class ClassifierParams:
    architecture: str
    weights: dict
    num_classes: int


@dataclass(frozen=True)
class FrozenClassifier:
    embeddings: EmbeddingTable
    params: ClassifierParams
    frozen: bool
    seed: int


@dataclass(frozen=True)
class TrainConfig:
    architecture: str = "bag_mlp"
    embed_dim: int = 32
    hidden_dim: int = 32
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1.0

    def __post_init__(self):
        if self.architecture not in ("bag_mlp", "birnn"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if min(self.embed_dim, self.hidden_dim, self.epochs, self.batch_size) < 1:
            raise ConfigError("embed_dim, hidden_dim, epochs, batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


def _init_weights(architecture, d, hidden, num_classes, rng):
    u = lambda *shape: rng.uniform(-0.1, 0.1, size=shape)
    if architecture == "bag_mlp":
        return {
            "w1": u(hidden, d),
            "b1": u(hidden),
            "w2": u(num_classes, hidden),
            "b2": u(num_classes),
        }
    return {
        "wx_f": u(hidden, d),
        "wh_f": u(hidden, hidden),
        "b_f": u(hidden),
        "wx_b": u(hidden, d),
        "wh_b": u(hidden, hidden),
        "b_b": u(hidden),
        "w_out": u(num_classes, 2 * hidden),
        "b_out": u(num_classes),
    }


def _forward_bag_mlp(w, embedded):
    x = embedded.mean(axis=1)
    h = np.tanh(w["w1"] @ x + w["b1"])
    logits = w["w2"] @ h + w["b2"]
    return logits, (x, h)


def _backward_bag_mlp(w, embedded, cache, dlogits):
    x, h = cache
    length = embedded.shape[1]
    da1 = (w["w2"].T @ dlogits) * (1.0 - h * h)
    dx = w["w1"].T @ da1
    dembedded = np.repeat(dx[:, None] / length, length, axis=1)
    grads = {
        "w2": np.outer(dlogits, h),
        "b2": dlogits,
        "w1": np.outer(da1, x),
        "b1": da1,
    }
    return dembedded, grads


def _forward_birnn(w, embedded):
    length = embedded.shape[1]
    hidden = w["b_f"].size
    hf = np.zeros((hidden, length))
    hb = np.zeros((hidden, length))
    prev = np.zeros(hidden)
    for t in range(length):
        prev = np.tanh(w["wx_f"] @ embedded[:, t] + w["wh_f"] @ prev + w["b_f"])
        hf[:, t] = prev
    prev = np.zeros(hidden)
    for t in range(length - 1, -1, -1):
        prev = np.tanh(w["wx_b"] @ embedded[:, t] + w["wh_b"] @ prev + w["b_b"])
        hb[:, t] = prev
    final = np.concatenate([hf[:, -1], hb[:, 0]])
    logits = w["w_out"] @ final + w["b_out"]
    return logits, (hf, hb, final)


def _backward_birnn(w, embedded, cache, dlogits):
    hf, hb, final = cache
    hidden, length = hf.shape
    dembedded = np.zeros_like(embedded)
    grads = {name: np.zeros_like(arr) for name, arr in w.items()}
    grads["w_out"] = np.outer(dlogits, final)
    grads["b_out"] = dlogits.copy()
    dfinal = w["w_out"].T @ dlogits

    dh = dfinal[:hidden]
    for t in range(length - 1, -1, -1):
        da = dh * (1.0 - hf[:, t] * hf[:, t])
        prev = hf[:, t - 1] if t > 0 else np.zeros(hidden)
        grads["wx_f"] += np.outer(da, embedded[:, t])
        grads["wh_f"] += np.outer(da, prev)
        grads["b_f"] += da
        dembedded[:, t] += w["wx_f"].T @ da
        dh = w["wh_f"].T @ da

    dh = dfinal[hidden:]
    for t in range(length):
        da = dh * (1.0 - hb[:, t] * hb[:, t])
        prev = hb[:, t + 1] if t < length - 1 else np.zeros(hidden)
        grads["wx_b"] += np.outer(da, embedded[:, t])
        grads["wh_b"] += np.outer(da, prev)
        grads["b_b"] += da
        dembedded[:, t] += w["wx_b"].T @ da
        dh = w["wh_b"].T @ da

    return dembedded, grads


_FORWARD = {"bag_mlp": _forward_bag_mlp, "birnn": _forward_birnn}
_BACKWARD = {"bag_mlp": _backward_bag_mlp, "birnn": _backward_birnn}


def forward_embedded(model: FrozenClassifier, embedded_seq) -> np.ndarray:
    """Logits for an already-embedded sequence (d x L)."""
    embedded = as_matrix(embedded_seq)
    if embedded.shape[1] == 0:
        raise ShapeError("empty sequence")
    if embedded.shape[0] != model.embeddings.dim:
        raise ShapeError("embedded sequence dimension mismatch")
    logits, _ = _FORWARD[model.params.architecture](model.params.weights, embedded)
    return logits


def forward_tokens(model: FrozenClassifier, tokens) -> np.ndarray:
    """Logits for a source-token index sequence."""
    tokens = list(tokens)
    if len(tokens) == 0:
        raise ShapeError("empty sequence")
    for t in tokens:
        if not 0 <= t < model.embeddings.vocab_size:
            raise IndexError(f"token {t} out of range")
    return forward_embedded(model, model.embeddings.table[:, tokens])


def backward_from_logits(model: FrozenClassifier, embedded_seq, dlogits) -> np.ndarray:
    """Gradient of a scalar with respect to the embedded input, given dlogits."""
    embedded = as_matrix(embedded_seq)
    arch = model.params.architecture
    _, cache = _FORWARD[arch](model.params.weights, embedded)
    dembedded, _ = _BACKWARD[arch](model.params.weights, embedded, cache, dlogits)
    return dembedded


def input_gradient(model: FrozenClassifier, embedded_seq, target_class: int) -> np.ndarray:
    """Gradient of cross-entropy at target_class with respect to the input."""
    if not model.frozen:
        raise ConfigError("input_gradient requires a frozen model")
    embedded = as_matrix(embedded_seq)
    logits = forward_embedded(model, embedded)
    if not 0 <= target_class < logits.size:
        raise IndexError(f"class {target_class} out of range")
    p = softmax(logits)
    dlogits = p.copy()
    dlogits[target_class] -= 1.0
    return backward_from_logits(model, embedded, dlogits)


def _accuracy(model, dataset) -> float:
    correct = 0
    for seq, label in zip(dataset.sequences, dataset.labels):
        pred = int(np.argmax(forward_tokens(model, seq)))
        correct += pred == label
    return correct / len(dataset.sequences)


def _freeze(embeddings, params, seed) -> FrozenClassifier:
    table = embeddings.copy()
    table.flags.writeable = False
    weights = {}
    for name, arr in params.weights.items():
        arr = arr.copy()
        arr.flags.writeable = False
        weights[name] = arr
    return FrozenClassifier(
        embeddings=EmbeddingTable(table=table),
        params=replace(params, weights=weights),
        frozen=True,
        seed=seed,
    )


def train_source(train, config: TrainConfig, seed: int, valid=None):
    """Train embeddings and classifier jointly with mini-batch SGD, then freeze.

    Returns the frozen model and a report with train/valid accuracy plus the
    majority-class baseline of the training split.
    """
    if len(train.sequences) == 0:
        raise ConfigError("empty training set")
    num_classes = len(train.class_names)
    if len(set(train.labels)) < 2:
        raise ConfigError("training data has fewer than 2 classes")

    rng = np.random.default_rng(seed)
    vocab_size = len(train.vocab)
    d, hidden = config.embed_dim, config.hidden_dim
    table = rng.uniform(-0.1, 0.1, size=(d, vocab_size))
    weights = _init_weights(config.architecture, d, hidden, num_classes, rng)
    forward = _FORWARD[config.architecture]
    backward = _BACKWARD[config.architecture]

    n = len(train.sequences)
    lr = config.learning_rate
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            wgrads = {name: np.zeros_like(arr) for name, arr in weights.items()}
            egrads = np.zeros_like(table)
            for i in batch:
                seq = train.sequences[i]
                embedded = table[:, seq]
                logits, cache = forward(weights, embedded)
                p = softmax(logits)
                dlogits = p.copy()
                dlogits[train.labels[i]] -= 1.0
                dembedded, grads = backward(weights, embedded, cache, dlogits)
                for name in wgrads:
                    wgrads[name] += grads[name]
                for pos, tok in enumerate(seq):
                    egrads[:, tok] += dembedded[:, pos]
            scale = lr / len(batch)
            for name in weights:
                weights[name] -= scale * wgrads[name]
            table -= scale * egrads

    if np.any(np.linalg.norm(table, axis=0) == 0.0):
        raise NumericError("training produced a zero embedding column")

    params = ClassifierParams(
        architecture=config.architecture, weights=weights, num_classes=num_classes
    )
    model = _freeze(table, params, seed)
    report = {
        "train_accuracy": _accuracy(model, train),
        "majority_class_accuracy": train.majority_class_accuracy(),
    }
    if valid is not None:
        report["valid_accuracy"] = _accuracy(model, valid)
    return model, report


def evaluate_source(model: FrozenClassifier, dataset) -> float:
    """Plain accuracy of the frozen model on a source-task dataset."""
    return _accuracy(model, dataset)


def save_checkpoint(model: FrozenClassifier, path) -> None:
    """Serialize a frozen model to JSON with bit-exact float round-trip."""
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": model.params.architecture,
        "d": model.embeddings.dim,
        "vocab_size": model.embeddings.vocab_size,
        "num_classes": model.params.num_classes,
        "seed": model.seed,
        "embeddings": model.embeddings.table.ravel().tolist(),
        "weights": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in sorted(model.params.weights.items())
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path) -> FrozenClassifier:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('format_version')}")
    table = np.array(doc["embeddings"]).reshape(doc["d"], doc["vocab_size"])
    weights = {
        name: np.array(spec["data"]).reshape(spec["shape"])
        for name, spec in doc["weights"].items()
    }
    params = ClassifierParams(
        architecture=doc["architecture"],
        weights=weights,
        num_classes=doc["num_classes"],
    )
    return _freeze(table, params, doc["seed"])
