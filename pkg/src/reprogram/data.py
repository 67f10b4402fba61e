"""Dataset ingestion, splits, subsampling, and synthetic task generation.

Target-task files are tokenized at the character level; source text corpora
are tokenized on whitespace (lowercased). Datasets are immutable once built.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError

UNK_TOKEN = "<unk>"


@dataclass(frozen=True)
class Vocab:
    """Bijection between token strings and dense indices from 0."""

    index_to_token: tuple
    token_to_index: dict = field(compare=False)

    @classmethod
    def from_tokens(cls, tokens) -> "Vocab":
        ordered = tuple(tokens)
        mapping = {tok: i for i, tok in enumerate(ordered)}
        if len(mapping) != len(ordered):
            raise DataFormatError("duplicate token in vocabulary")
        return cls(index_to_token=ordered, token_to_index=mapping)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def encode(self, token: str) -> int:
        idx = self.token_to_index.get(token)
        if idx is None:
            raise KeyError(f"token {token!r} not in vocabulary")
        return idx

    def with_unknown(self) -> "Vocab":
        """Append a reserved unknown-token index for out-of-vocab inference."""
        if UNK_TOKEN in self.token_to_index:
            return self
        return Vocab.from_tokens(self.index_to_token + (UNK_TOKEN,))


@dataclass(frozen=True)
class SequenceDataset:
    sequences: tuple
    labels: tuple
    vocab: Vocab
    class_names: tuple

    def __post_init__(self):
        if len(self.sequences) != len(self.labels):
            raise DataFormatError("sequences and labels differ in length")
        size = len(self.vocab)
        for seq in self.sequences:
            for tok in seq:
                if not 0 <= tok < size:
                    raise DataFormatError(f"token index {tok} out of range")
        for label in self.labels:
            if not 0 <= label < len(self.class_names):
                raise DataFormatError(f"label {label} out of range")

    def __len__(self) -> int:
        return len(self.sequences)

    def majority_class_accuracy(self) -> float:
        if not self.labels:
            return 0.0
        counts = np.bincount(self.labels, minlength=len(self.class_names))
        return float(np.max(counts)) / len(self.labels)

    def take(self, indices) -> "SequenceDataset":
        return SequenceDataset(
            sequences=tuple(self.sequences[i] for i in indices),
            labels=tuple(self.labels[i] for i in indices),
            vocab=self.vocab,
            class_names=self.class_names,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Train/valid/test fractions (floats summing to 1) or absolute counts."""

    train: float
    valid: float
    test: float
    seed: int = 0

    def counts(self, size: int):
        parts = (self.train, self.valid, self.test)
        if all(isinstance(p, int) for p in parts):
            if sum(parts) > size:
                raise ConfigError(f"split counts {parts} exceed dataset size {size}")
            return parts
        if abs(sum(parts) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        n_train = int(round(self.train * size))
        n_valid = int(round(self.valid * size))
        n_train = min(n_train, size)
        n_valid = min(n_valid, size - n_train)
        return n_train, n_valid, size - n_train - n_valid


def _build_dataset(rows):
    """rows: list of (sequence_string, label_string) in file order."""
    chars = sorted({c for seq, _ in rows for c in seq})
    vocab = Vocab.from_tokens(chars)
    class_names = []
    labels = []
    for _, label in rows:
        if label not in class_names:
            class_names.append(label)
        labels.append(class_names.index(label))
    sequences = tuple(tuple(vocab.encode(c) for c in seq) for seq, _ in rows)
    return SequenceDataset(
        sequences=sequences,
        labels=tuple(labels),
        vocab=vocab,
        class_names=tuple(class_names),
    )


def load_csv(path, sequence_column="sequence", label_column="label") -> SequenceDataset:
    """Character-tokenized dataset from a headered CSV file."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataFormatError(f"{path}: empty file")
        for col in (sequence_column, label_column):
            if col not in reader.fieldnames:
                raise DataFormatError(f"{path}: missing column {col!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            seq = row[sequence_column]
            label = row[label_column]
            if not seq:
                raise DataFormatError(f"{path}: empty sequence at line {lineno}")
            rows.append((seq, label))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return _build_dataset(rows)


def save_csv(dataset: SequenceDataset, path, sequence_column="sequence", label_column="label"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([sequence_column, label_column])
        for seq, label in zip(dataset.sequences, dataset.labels):
            text = "".join(dataset.vocab.index_to_token[t] for t in seq)
            writer.writerow([text, dataset.class_names[label]])


def load_fasta(path, delimiter="|") -> SequenceDataset:
    """FASTA records; the label is the header field after `delimiter`."""
    rows = []
    header = None
    body: list[str] = []

    def flush(lineno):
        if header is None:
            return
        if delimiter not in header:
            raise DataFormatError(f"{path}: header without label near line {lineno}")
        label = header.split(delimiter, 1)[1].strip()
        seq = "".join(body)
        if not seq:
            raise DataFormatError(f"{path}: empty sequence near line {lineno}")
        rows.append((seq, label))

    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                flush(lineno)
                header = line[1:]
                body = []
            else:
                if header is None:
                    raise DataFormatError(f"{path}: sequence before header at line {lineno}")
                body.append(line)
        flush("end")
    if not rows:
        raise DataFormatError(f"{path}: no records")
    return _build_dataset(rows)


def split(dataset: SequenceDataset, spec: SplitSpec):
    """Disjoint, covering, seed-deterministic train/valid/test split."""
    n_train, n_valid, n_test = spec.counts(len(dataset))
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(dataset))
    train = dataset.take(order[:n_train])
    valid = dataset.take(order[n_train : n_train + n_valid])
    test = dataset.take(order[n_train + n_valid : n_train + n_valid + n_test])
    return train, valid, test


def subsample(dataset: SequenceDataset, n: int, seed: int) -> SequenceDataset:
    """Uniform subsample without replacement; nested across n for a fixed seed."""
    if n > len(dataset):
        raise ConfigError(f"cannot subsample {n} from {len(dataset)} rows")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    return dataset.take(order[:n])


SOURCE_VOCAB_SIZE = 200
TARGET_ALPHABET = "ABCDEFG"
TARGET_MOTIF = (0, 0, 0)  # "AAA"


def _contains_motif(seq, motif=TARGET_MOTIF):
    m = len(motif)
    return any(tuple(seq[i : i + m]) == motif for i in range(len(seq) - m + 1))


def _synth_source(rng, size):
    """Balanced task over a 200-token vocab: do first-half tokens outnumber the rest?"""
    half = SOURCE_VOCAB_SIZE // 2
    vocab = Vocab.from_tokens([f"t{i:03d}" for i in range(SOURCE_VOCAB_SIZE)])
    sequences, labels = [], []
    for i in range(size):
        label = i % 2
        length = int(rng.integers(10, 21))
        majority = int(rng.integers(length // 2 + 1, length + 1))
        k_positive = majority if label == 1 else length - majority
        tokens = np.concatenate(
            [
                rng.integers(0, half, size=k_positive),
                rng.integers(half, SOURCE_VOCAB_SIZE, size=length - k_positive),
            ]
        )
        rng.shuffle(tokens)
        sequences.append(tuple(int(t) for t in tokens))
        labels.append(label)
    return SequenceDataset(
        sequences=tuple(sequences),
        labels=tuple(labels),
        vocab=vocab,
        class_names=("minority_first_half", "majority_first_half"),
    )


def _synth_target(rng, size):
    """Balanced 7-token task: does the sequence contain the AAA motif?"""
    vocab = Vocab.from_tokens(list(TARGET_ALPHABET))
    k = len(vocab)
    sequences, labels = [], []
    for i in range(size):
        label = i % 2
        length = int(rng.integers(8, 15))
        while True:
            seq = [int(t) for t in rng.integers(0, k, size=length)]
            if label == 1:
                pos = int(rng.integers(0, length - len(TARGET_MOTIF) + 1))
                seq[pos : pos + len(TARGET_MOTIF)] = list(TARGET_MOTIF)
                break
            if not _contains_motif(seq):
                break
        sequences.append(tuple(seq))
        labels.append(label)
    return SequenceDataset(
        sequences=tuple(sequences),
        labels=tuple(labels),
        vocab=vocab,
        class_names=("no_motif", "has_motif"),
    )


def synth_tasks(seed: int, source_size: int, target_size: int):
    """Deterministic synthetic (source, target) task pair for desk-scale runs."""
    if source_size < 1 or target_size < 1:
        raise ConfigError("sizes must be positive")
    rng = np.random.default_rng(seed)
    source = _synth_source(rng, source_size)
    target = _synth_target(rng, target_size)
    return source, target
