"""Adversarial program, label map, and the dictionary-learning training loop.

The program is a coefficient matrix theta (|V_S| x |V_T|): the embedding of
target token j is the source embedding table times column j. Training
alternates a sparse-coding projection of theta (OMP/k-SVD against the
normalized source embeddings) with mini-batch gradient steps through the
frozen source classifier.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import FrozenClassifier, backward_from_logits, forward_embedded
from .errors import ConfigError, ShapeError
from .numerics import as_matrix, softmax
from .sparse_coding import Dictionary, KsvdConfig, ksvd_run

PROGRAM_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LabelMap:
    """Total map from source class index to target class index, surjective."""

    source_to_target: tuple

    def __post_init__(self):
        if not self.source_to_target:
            raise ConfigError("label map must cover at least one source class")
        targets = set(self.source_to_target)
        expected = set(range(self.num_target_classes))
        if targets != expected:
            raise ConfigError("label map must be surjective onto 0..max target class")

    @property
    def num_source_classes(self) -> int:
        return len(self.source_to_target)

    @property
    def num_target_classes(self) -> int:
        return max(self.source_to_target) + 1


@dataclass(frozen=True)
class ReprogramConfig:
    """Outer-loop parameters wrapping the inner sparse-coding configuration."""

    outer_iterations: int
    ksvd: KsvdConfig
    step_size: float = 0.01
    decay: float | None = None
    batch_size: int = 64
    projection_mode: str = "every_outer_iteration"
    seed: int = 0

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise ConfigError("outer_iterations must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.step_size < 0:
            raise ConfigError("step_size must be non-negative")
        if self.decay is not None and not 0 < self.decay <= 1:
            raise ConfigError("decay must lie in (0, 1]")
        if self.projection_mode not in ("every_outer_iteration", "encode_once"):
            raise ConfigError(f"unknown projection_mode {self.projection_mode!r}")

    def step_at(self, iteration: int) -> float:
        if self.decay is None:
            return self.step_size
        return self.step_size * self.decay**iteration


@dataclass(frozen=True)
class AdversarialProgram:
    """Learned theta plus sparsity metadata and the config it was trained with."""

    theta: np.ndarray
    config: dict
    source_basis: np.ndarray | None = None

    @property
    def support_sizes(self) -> np.ndarray:
        return np.count_nonzero(self.theta, axis=0)


def initial_theta(source_vocab_size: int, target_vocab_size: int, seed: int) -> np.ndarray:
    """Random program initialization, uniform in [-0.01, 0.01]."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.01, 0.01, size=(source_vocab_size, target_vocab_size))


def _basis(model: FrozenClassifier, override=None) -> np.ndarray:
    return model.embeddings.table if override is None else override


def apply_program(theta, model: FrozenClassifier, target_tokens, basis=None) -> np.ndarray:
    """Embed a target-token sequence: column l = basis @ theta[:, tokens[l]]."""
    theta = as_matrix(theta)
    basis = _basis(model, basis)
    tokens = list(target_tokens)
    for t in tokens:
        if not 0 <= t < theta.shape[1]:
            raise IndexError(f"target token {t} out of range")
    if theta.shape[0] != basis.shape[1]:
        raise ShapeError("theta rows must match source vocabulary size")
    return basis @ theta[:, tokens]


def map_output(label_map: LabelMap, source_probs) -> np.ndarray:
    """Sum source-class probabilities into their mapped target classes."""
    p = np.asarray(source_probs, dtype=np.float64)
    if p.size != label_map.num_source_classes:
        raise ShapeError("probability vector size does not match label map")
    out = np.zeros(label_map.num_target_classes)
    np.add.at(out, np.array(label_map.source_to_target), p)
    return out


def _mapped_loss_dlogits(logits, label_map: LabelMap, target_label: int):
    """Cross-entropy of the mapped distribution and its gradient wrt logits."""
    p = softmax(logits)
    mapped = map_output(label_map, p)
    loss = float(-np.log(mapped[target_label]))
    hits = np.array(label_map.source_to_target) == target_label
    dlogits = p - np.where(hits, p / mapped[target_label], 0.0)
    return loss, dlogits


def reprogram_loss(theta, model, label_map: LabelMap, batch, basis=None) -> float:
    """Mean mapped cross-entropy over a batch of (target_tokens, target_label)."""
    loss, _ = _loss_and_grad(theta, model, label_map, batch, basis=basis, want_grad=False)
    return loss


def grad_theta(theta, model, label_map: LabelMap, batch, basis=None) -> np.ndarray:
    """Gradient of the mean mapped cross-entropy with respect to theta."""
    _, grad = _loss_and_grad(theta, model, label_map, batch, basis=basis)
    return grad


def _loss_and_grad(theta, model, label_map, batch, basis=None, want_grad=True):
    theta = as_matrix(theta)
    basis = _basis(model, basis)
    if not batch:
        raise ConfigError("batch must be non-empty")
    total_loss = 0.0
    grad = np.zeros_like(theta) if want_grad else None
    for tokens, label in batch:
        embedded = apply_program(theta, model, tokens, basis=basis)
        logits = forward_embedded(model, embedded)
        loss, dlogits = _mapped_loss_dlogits(logits, label_map, label)
        total_loss += loss
        if want_grad:
            dembedded = backward_from_logits(model, embedded, dlogits)
            dcoefs = basis.T @ dembedded
            for pos, tok in enumerate(tokens):
                grad[:, tok] += dcoefs[:, pos]
    scale = 1.0 / len(batch)
    if want_grad:
        grad *= scale
    return total_loss * scale, grad


def evaluate(theta, model, label_map: LabelMap, dataset, basis=None):
    """Argmax accuracy and target-class confusion counts (rows = true class)."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    n_classes = label_map.num_target_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for tokens, label in zip(dataset.sequences, dataset.labels):
        embedded = apply_program(theta, model, tokens, basis=basis)
        probs = map_output(label_map, softmax(forward_embedded(model, embedded)))
        pred = int(np.argmax(probs))
        confusion[label, pred] += 1
    accuracy = float(np.trace(confusion)) / len(dataset)
    return accuracy, confusion


def evaluate_program(program: AdversarialProgram, model, label_map, dataset):
    return evaluate(
        program.theta, model, label_map, dataset, basis=program.source_basis
    )


def _project(theta, table, dictionary, ksvd_cfg):
    """Sparsify theta: code the implied target embeddings against the dictionary."""
    signals = table @ theta
    dictionary, codes, trace = ksvd_run(signals, dictionary, ksvd_cfg)
    return dictionary.fold_codes(codes), dictionary, trace


def reprogram_train(model: FrozenClassifier, label_map: LabelMap, train, valid,
                    cfg: ReprogramConfig):
    """Alternating sparse-coding projection and gradient descent on theta.

    Per outer iteration: project theta onto sparse codes over the source
    embedding dictionary (every iteration, or once up front in encode_once
    mode), then take one mini-batch gradient step through the frozen model.
    Returns the program with the best validation accuracy (ties: earliest
    iteration) and the full metrics trace.
    """
    if not model.frozen:
        raise ConfigError("source model must be frozen")
    if len(train) == 0 or len(valid) == 0:
        raise ConfigError("train and valid datasets must be non-empty")
    if model.params.num_classes != label_map.num_source_classes:
        raise ConfigError("label map does not cover the source classes")

    table = model.embeddings.table
    dictionary = Dictionary.from_matrix(table)
    if cfg.ksvd.update_dictionary:
        basis_changes = True
    else:
        basis_changes = False

    theta = initial_theta(table.shape[1], len(train.vocab), cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    if cfg.projection_mode == "encode_once":
        theta, dictionary, _ = _project(theta, table, dictionary, cfg.ksvd)
        if basis_changes:
            table = dictionary.atoms

    samples = list(zip(train.sequences, train.labels))
    order: list[int] = []
    trace = []
    best_theta = theta.copy()
    best_acc = -1.0
    basis = None if not basis_changes else table

    for it in range(cfg.outer_iterations):
        coding_error = None
        if cfg.projection_mode == "every_outer_iteration":
            theta, dictionary, ksvd_trace = _project(theta, table, dictionary, cfg.ksvd)
            coding_error = ksvd_trace[-1]
            if basis_changes:
                table = dictionary.atoms
                basis = table

        if not order:
            order = list(rng.permutation(len(samples)))
        batch_idx = order[: cfg.batch_size]
        order = order[cfg.batch_size :]
        batch = [samples[i] for i in batch_idx]

        loss, grad = _loss_and_grad(theta, model, label_map, batch, basis=basis)
        theta = theta - cfg.step_at(it) * grad

        valid_acc, _ = evaluate(theta, model, label_map, valid, basis=basis)
        entry = {
            "iteration": it,
            "loss": loss,
            "valid_accuracy": valid_acc,
            "mean_support": float(np.mean(np.count_nonzero(theta, axis=0))),
        }
        if coding_error is not None:
            entry["coding_error"] = coding_error
        if basis_changes:
            entry["dictionary_updated"] = True
        trace.append(entry)
        if valid_acc > best_acc:
            best_acc = valid_acc
            best_theta = theta.copy()

    program = AdversarialProgram(
        theta=best_theta,
        config=asdict(cfg),
        source_basis=None if basis is None else basis.copy(),
    )
    return program, trace


def save_program(program: AdversarialProgram, path) -> None:
    doc = {
        "format_version": PROGRAM_FORMAT_VERSION,
        "source_vocab_size": program.theta.shape[0],
        "target_vocab_size": program.theta.shape[1],
        "config": program.config,
        "theta": program.theta.ravel().tolist(),
    }
    if program.source_basis is not None:
        doc["source_basis"] = {
            "shape": list(program.source_basis.shape),
            "data": program.source_basis.ravel().tolist(),
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_program(path) -> AdversarialProgram:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != PROGRAM_FORMAT_VERSION:
        raise ConfigError(f"unsupported program version {doc.get('format_version')}")
    theta = np.array(doc["theta"]).reshape(
        doc["source_vocab_size"], doc["target_vocab_size"]
    )
    basis = None
    if "source_basis" in doc:
        spec = doc["source_basis"]
        basis = np.array(spec["data"]).reshape(spec["shape"])
    return AdversarialProgram(theta=theta, config=doc["config"], source_basis=basis)


def trace_to_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "valid_accuracy", "mean_support"])
        for entry in trace:
            writer.writerow(
                [
                    entry["iteration"],
                    repr(entry["loss"]),
                    repr(entry["valid_accuracy"]),
                    repr(entry["mean_support"]),
                ]
            )
