"""
Binary-relevance classifiers over encoded integrands.

Each sub-algorithm gets its own ClassifierStack: embedding, two recurrent
layers (sequence LSTM or child-sum TreeLSTM), dropout on the second layer's
final state, a ReLU dense layer and a sigmoid output. The two kinds share
parameter names and shapes, so the same seed gives them the same initial
weights.
"""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
from pydantic import ValidationError

from .config import ModelConfig
from .datagen import normalize_constants
from .encode import PAD, TokenSequence, TreeEncoding, Vocabulary, encode_sequence, encode_tree
from .exceptions import DataError, NumericError
from .expr import Expr
from .models import ALGORITHMS, SubAlgorithm
from .schemas import CheckpointFile
from .tensor import (
    Tensor,
    binary_cross_entropy,
    columns,
    concat,
    gather,
    relu,
    rows,
    segment_sum,
    sigmoid,
    tanh,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
GATES = ("i", "f", "o", "u")
INIT_STREAM = 0
TRAIN_STREAM = 1

Encoding = Union[TokenSequence, TreeEncoding]


class ModelKind(str, Enum):
    LSTM = "lstm"
    TREELSTM = "treelstm"


def parameter_shapes(vocab_size: int, config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {"embedding": (vocab_size, config.embedding_dim)}
    layers = (("l1", config.embedding_dim, config.hidden1), ("l2", config.hidden1, config.hidden2))
    for layer, n_in, hidden in layers:
        for gate in GATES:
            shapes[f"{layer}.W_{gate}"] = (n_in, hidden)
            shapes[f"{layer}.U_{gate}"] = (hidden, hidden)
            shapes[f"{layer}.b_{gate}"] = (hidden,)
    shapes["dense.W"] = (config.hidden2, config.dense)
    shapes["dense.b"] = (config.dense,)
    shapes["out.W"] = (config.dense, 1)
    shapes["out.b"] = (1,)
    return shapes


def classifier_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, stream)))


def dropout_mask(rng: np.random.Generator, shape: Tuple[int, ...], rate: float) -> np.ndarray:
    """Inverted dropout: kept units are scaled by 1 / (1 - rate)"""
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ---------------------------------------------------------------------------
# Batches


@dataclass
class SequenceBatch:
    tokens: np.ndarray  # time-major, PAD after each sequence's end
    mask: np.ndarray  # (steps, size, 1), 1.0 while the sequence is running
    size: int
    steps: int


@dataclass
class TreeBatch:
    """Nodes of several trees ordered by height; each level is a contiguous block"""

    tokens: np.ndarray
    # (start, stop, child rows into the earlier levels, parent index within the level)
    levels: List[Tuple[int, int, np.ndarray, np.ndarray]]
    roots: np.ndarray
    size: int


def sequence_batch(seqs: Sequence[TokenSequence]) -> SequenceBatch:
    if not seqs:
        raise DataError("empty batch")
    lengths = [len(s) for s in seqs]
    if min(lengths) == 0:
        raise DataError("empty token sequence")
    steps, size = max(lengths), len(seqs)
    grid = np.full((steps, size), PAD, dtype=np.int64)
    mask = np.zeros((steps, size, 1))
    for b, seq in enumerate(seqs):
        grid[: len(seq), b] = seq.ids
        mask[: len(seq), b, 0] = 1.0
    return SequenceBatch(grid.reshape(-1), mask, size, steps)


def tree_batch(trees: Sequence[TreeEncoding]) -> TreeBatch:
    if not trees:
        raise DataError("empty batch")
    entries = []
    for t, tree in enumerate(trees):
        if tree.node_count() == 0:
            raise DataError("empty tree")
        for node, height in enumerate(tree.heights()):
            entries.append((height, t, node))
    # leaves first, so every child row is computed before its parent
    entries.sort()
    position = {(t, node): i for i, (_, t, node) in enumerate(entries)}
    tokens = np.array([trees[t].token_ids[node] for _, t, node in entries], dtype=np.int64)
    # one level per height: row range plus (child row, parent slot) pairs
    levels = []
    start = 0
    while start < len(entries):
        height = entries[start][0]
        stop = start
        while stop < len(entries) and entries[stop][0] == height:
            stop += 1
        child_rows: List[int] = []
        segments: List[int] = []
        for local, (_, t, node) in enumerate(entries[start:stop]):
            for child in trees[t].children[node]:
                child_rows.append(position[(t, child)])
                segments.append(local)
        levels.append((start, stop, np.array(child_rows, dtype=np.int64), np.array(segments, dtype=np.int64)))
        start = stop
    roots = np.array([position[(t, 0)] for t in range(len(trees))], dtype=np.int64)
    return TreeBatch(tokens, levels, roots, len(trees))


def make_batch(kind: ModelKind, encodings: Sequence[Encoding]) -> Union[SequenceBatch, TreeBatch]:
    return sequence_batch(encodings) if kind is ModelKind.LSTM else tree_batch(encodings)


def encode_input(kind: ModelKind, e: Expr, vocab: Vocabulary) -> Encoding:
    """Models read the constant-normalized form of an integrand"""
    normalized = normalize_constants(e)
    if kind is ModelKind.LSTM:
        return encode_sequence(normalized, vocab)
    return encode_tree(normalized, vocab)


# ---------------------------------------------------------------------------
# Layers


def _fused(params: Dict[str, Tensor], layer: str, gates: str) -> Tuple[Tensor, Tensor, Tensor]:
    def pick(kind: str) -> Tensor:
        return concat([params[f"{layer}.{kind}_{g}"] for g in gates], axis=-1)

    return pick("W"), pick("U"), pick("b")


def _lstm_layer(params: Dict[str, Tensor], layer: str, inputs: Tensor, batch: SequenceBatch) -> Tuple[Tensor, Tensor]:
    """All per-step hidden states (time-major rows) and the final hidden state"""
    W, U, b = _fused(params, layer, "ifou")
    hidden = U.shape[0]
    projected = inputs @ W + b
    size = batch.size
    h = c = None
    outputs = []
    for t in range(batch.steps):
        z = rows(projected, t * size, (t + 1) * size)
        if h is not None:
            z = z + h @ U
        i = sigmoid(columns(z, 0, hidden))
        f = sigmoid(columns(z, hidden, 2 * hidden))
        o = sigmoid(columns(z, 2 * hidden, 3 * hidden))
        u = tanh(columns(z, 3 * hidden, 4 * hidden))
        c_new = i * u if c is None else i * u + f * c
        h_new = o * tanh(c_new)
        m = batch.mask[t]
        if h is None or m.all():
            h, c = h_new, c_new
        else:
            # finished sequences carry their last state forward
            h = h_new * m + h * (1.0 - m)
            c = c_new * m + c * (1.0 - m)
        outputs.append(h)
    return concat(outputs, axis=0), h


def _tree_layer(params: Dict[str, Tensor], layer: str, inputs: Tensor, batch: TreeBatch) -> Tensor:
    """Child-sum TreeLSTM over all nodes; rows follow the batch order"""
    W_iou, U_iou, b_iou = _fused(params, layer, "iou")
    W_f, U_f, b_f = params[f"{layer}.W_f"], params[f"{layer}.U_f"], params[f"{layer}.b_f"]
    hidden = U_f.shape[0]
    x_iou = inputs @ W_iou + b_iou
    x_f = inputs @ W_f + b_f
    h_levels: List[Tensor] = []
    c_levels: List[Tensor] = []
    for start, stop, child_rows, segments in batch.levels:
        count = stop - start
        z = rows(x_iou, start, stop)
        carried = None
        if len(child_rows):
            # children sit in earlier levels
            h_prev = h_levels[0] if len(h_levels) == 1 else concat(h_levels, axis=0)
            c_prev = c_levels[0] if len(c_levels) == 1 else concat(c_levels, axis=0)
            h_children = gather(h_prev, child_rows)
            c_children = gather(c_prev, child_rows)
            z = z + segment_sum(h_children, segments, count) @ U_iou
            f = sigmoid(gather(rows(x_f, start, stop), segments) + h_children @ U_f)
            carried = segment_sum(f * c_children, segments, count)
        i = sigmoid(columns(z, 0, hidden))
        o = sigmoid(columns(z, hidden, 2 * hidden))
        u = tanh(columns(z, 2 * hidden, 3 * hidden))
        c = i * u if carried is None else i * u + carried
        h_levels.append(o * tanh(c))
        c_levels.append(c)
    return h_levels[0] if len(h_levels) == 1 else concat(h_levels, axis=0)


class ClassifierStack:
    """One binary classifier: embedding, two recurrent layers, dense, sigmoid"""

    def __init__(
        self,
        kind: ModelKind,
        vocab_size: int,
        config: ModelConfig,
        rng: Optional[np.random.Generator] = None,
    ):
        self.kind = ModelKind(kind)
        self.vocab_size = vocab_size
        self.config = config
        self.shapes = parameter_shapes(vocab_size, config)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: Dict[str, Tensor] = {
            name: Tensor(self._initial(name, shape, rng), requires_grad=True)
            for name, shape in self.shapes.items()
        }

    def _initial(self, name: str, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        if name.endswith(".b_f"):
            return np.ones(shape)
        if name.split(".")[-1].startswith("b"):
            return np.zeros(shape)
        if name == "embedding":
            bound = 1.0 / math.sqrt(shape[1])
        elif name.startswith(("dense", "out")):
            bound = 1.0 / math.sqrt(shape[0])
        else:
            bound = 1.0 / math.sqrt(shape[1])
        return rng.uniform(-bound, bound, size=shape)

    def fill(self, value: float) -> None:
        for p in self.params.values():
            p.data[...] = value

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        if set(state) != set(self.shapes):
            raise DataError(f"parameter names differ: {sorted(set(state) ^ set(self.shapes))}")
        for name, shape in self.shapes.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != shape:
                raise DataError(f"parameter {name} has shape {value.shape}, expected {shape}")
            if not np.all(np.isfinite(value)):
                raise DataError(f"parameter {name} has non-finite values")
            self.params[name].data = value.copy()

    def forward(self, batch, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Probabilities of shape (batch size, 1)"""
        tokens = batch.tokens
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise DataError(f"token id outside the vocabulary of size {self.vocab_size}")
        p = self.params
        x = gather(p["embedding"], tokens)
        if self.kind is ModelKind.LSTM:
            states, _ = _lstm_layer(p, "l1", x, batch)
            _, final = _lstm_layer(p, "l2", states, batch)
        else:
            states = _tree_layer(p, "l1", x, batch)
            final = gather(_tree_layer(p, "l2", states, batch), batch.roots)
        if train and self.config.dropout > 0:
            if rng is None:
                raise ValueError("training mode needs an rng for dropout")
            final = final * dropout_mask(rng, final.shape, self.config.dropout)
        dense = relu(final @ p["dense.W"] + p["dense.b"])
        return sigmoid(dense @ p["out.W"] + p["out.b"])

    def predict_proba(self, encodings: Sequence[Encoding], batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(encodings), batch_size):
            batch = make_batch(self.kind, encodings[start : start + batch_size])
            out.append(self.forward(batch).data.reshape(-1))
        return np.concatenate(out) if out else np.zeros(0)


def forward_sequence(stack: ClassifierStack, seq: TokenSequence, mode: str = "eval", rng=None) -> float:
    return stack.forward(sequence_batch([seq]), train=mode == "train", rng=rng).item()


def forward_tree(stack: ClassifierStack, tree: TreeEncoding, mode: str = "eval", rng=None) -> float:
    return stack.forward(tree_batch([tree]), train=mode == "train", rng=rng).item()


def loss_bce(p: float, y: int) -> float:
    return binary_cross_entropy(Tensor(p), np.asarray(float(y))).item()


# ---------------------------------------------------------------------------
# Optimisation


class Adam:
    def __init__(self, params: Dict[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * p.grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * p.grad * p.grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def positive_weight(targets: np.ndarray, max_weight: float) -> float:
    """#neg / #pos clamped to [1, max_weight]"""
    positives = float(np.sum(targets))
    if positives == 0:
        return 1.0
    negatives = float(len(targets)) - positives
    return float(min(max(negatives / positives, 1.0), max_weight))


def train_classifier(
    stack: ClassifierStack,
    encodings: Sequence[Encoding],
    targets: np.ndarray,
    rng: np.random.Generator,
    name: str = "",
) -> List[float]:
    """Fit one binary classifier with Adam on positively weighted BCE.

    Args:
        stack: the classifier, updated in place.
        encodings: model inputs, sequences or trees to match stack.kind.
        targets: 0/1 label per input.
        rng: drives the epoch shuffles and dropout masks.
        name: label name for log and error messages.

    Returns:
        Mean training loss of every epoch, in order.

    Raises:
        DataError: inputs and targets differ in length or are empty.
        NumericError: a loss or gradient became non-finite.
    """
    config = stack.config
    targets = np.asarray(targets, dtype=np.float64)
    if len(encodings) != len(targets) or not len(encodings):
        raise DataError(f"classifier {name}: {len(encodings)} inputs for {len(targets)} targets")
    optimizer = Adam(stack.params, config.lr, config.beta1, config.beta2, config.eps)
    weight = positive_weight(targets, config.pos_weight_max)
    curve = []
    for epoch in range(1, config.epochs + 1):
        # fresh shuffle every epoch from the classifier stream
        order = rng.permutation(len(encodings))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            index = order[start : start + config.batch_size]
            batch = make_batch(stack.kind, [encodings[i] for i in index])
            y = targets[index]
            stack.zero_grad()
            loss = binary_cross_entropy(stack.forward(batch, train=True, rng=rng), y, np.where(y > 0, weight, 1.0))
            value = loss.item()
            # no optimizer step on a non-finite loss or gradient
            if not math.isfinite(value):
                raise NumericError(f"classifier {name}: non-finite loss in epoch {epoch}")
            loss.backward()
            for pname, p in stack.params.items():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise NumericError(f"classifier {name}: non-finite gradient for {pname} in epoch {epoch}")
            optimizer.step()
            total += value * len(index)
        curve.append(total / len(order))
        logger.debug("%s %s epoch %d: mean loss %.6f", stack.kind.value, name, epoch, curve[-1])
    return curve


def check_gradients(
    stack: ClassifierStack, example: Encoding, target: float = 1.0, step: float = 1e-5
) -> float:
    """Max elementwise |a - n| / max(1e-6, |a| + |n|) of analytic against central differences"""
    batch = make_batch(stack.kind, [example])
    y = np.array([target])

    def loss() -> Tensor:
        return binary_cross_entropy(stack.forward(batch), y)

    stack.zero_grad()
    loss().backward()
    worst = 0.0
    for p in stack.params.values():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + step
            upper = loss().item()
            flat[k] = saved - step
            lower = loss().item()
            flat[k] = saved
            numeric = (upper - lower) / (2 * step)
            a = analytic.reshape(-1)[k]
            worst = max(worst, abs(a - numeric) / max(1e-6, abs(a) + abs(numeric)))
    stack.zero_grad()
    return worst


# ---------------------------------------------------------------------------
# Binary relevance


@dataclass
class BinaryRelevanceModel:
    """One independent ClassifierStack per sub-algorithm, in label order"""

    kind: ModelKind
    vocabulary: Vocabulary
    config: ModelConfig
    classifiers: List[ClassifierStack]

    @classmethod
    def create(cls, kind: ModelKind, vocabulary: Vocabulary, config: ModelConfig, seed: int) -> "BinaryRelevanceModel":
        kind = ModelKind(kind)
        classifiers = [
            ClassifierStack(kind, len(vocabulary), config, classifier_rng(seed, alg.value, INIT_STREAM))
            for alg in ALGORITHMS
        ]
        return cls(kind, vocabulary, config, classifiers)

    def encode(self, e: Expr) -> Encoding:
        return encode_input(self.kind, e, self.vocabulary)

    def predict_encodings(self, encodings: Sequence[Encoding]) -> np.ndarray:
        """(len(encodings), |L|) probabilities in eval mode"""
        return np.stack([c.predict_proba(encodings) for c in self.classifiers], axis=1)


def predict(model: BinaryRelevanceModel, e: Expr) -> np.ndarray:
    return model.predict_encodings([model.encode(e)])[0]


def _train_one(
    kind: ModelKind,
    vocab_size: int,
    config: ModelConfig,
    state: Dict[str, np.ndarray],
    encodings: Sequence[Encoding],
    targets: np.ndarray,
    seed: int,
    index: int,
) -> Tuple[Dict[str, np.ndarray], List[float], float]:
    stack = ClassifierStack(kind, vocab_size, config)
    stack.load_state_dict(state)
    started = time.perf_counter()
    curve = train_classifier(
        stack, encodings, targets, classifier_rng(seed, index, TRAIN_STREAM), SubAlgorithm(index).label
    )
    return stack.state_dict(), curve, time.perf_counter() - started


def train(
    model: BinaryRelevanceModel,
    encodings: Sequence[Encoding],
    labels: np.ndarray,
    seed: int,
    workers: int = 1,
) -> Dict[str, List[float]]:
    """Train every classifier independently; returns loss curves by label"""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (len(encodings), len(ALGORITHMS)):
        raise DataError(f"labels have shape {labels.shape}, expected ({len(encodings)}, {len(ALGORITHMS)})")
    jobs = [
        (model.kind, len(model.vocabulary), model.config, stack.state_dict(), encodings, labels[:, j], seed, j)
        for j, stack in enumerate(model.classifiers)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as executor:
            results = list(executor.map(_train_one, *zip(*jobs)))
    else:
        results = [_train_one(*job) for job in jobs]
    curves = {}
    for alg, stack, (state, curve, seconds) in zip(ALGORITHMS, model.classifiers, results):
        stack.load_state_dict(state)
        curves[alg.label] = curve
        logger.info(
            "%s %s: loss %.4f -> %.4f in %.1fs", model.kind.value, alg.label, curve[0], curve[-1], seconds
        )
    return curves


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    model: BinaryRelevanceModel
    corpus_hash: str
    model_hash: str
    config: dict


def save_checkpoint(
    model: BinaryRelevanceModel, path: Path, config_echo: dict, corpus_hash: str, model_hash: str
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind.value,
        "config": config_echo,
        "hyperparameters": model.config.model_dump(mode="json"),
        "corpus_hash": corpus_hash,
        "model_hash": model_hash,
        "vocabulary_hash": model.vocabulary.hash(),
        "vocabulary": list(model.vocabulary.tokens),
        "labels": list(SubAlgorithm.labels()),
        "classifiers": [
            {name: np.ascontiguousarray(value) for name, value in stack.state_dict().items()}
            for stack in model.classifiers
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(payload, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS))
    logger.info("Saved %s checkpoint to %s", model.kind.value, path)


def load_checkpoint(
    path: Path,
    config: Optional[ModelConfig] = None,
    vocabulary: Optional[Vocabulary] = None,
    kind: Optional[ModelKind] = None,
) -> Checkpoint:
    """Read a checkpoint and validate it against the expected config and vocabulary"""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing checkpoint: {path}")
    try:
        data = CheckpointFile.model_validate(orjson.loads(path.read_bytes()))
    except (orjson.JSONDecodeError, ValidationError) as exc:
        raise DataError(f"{path}: invalid checkpoint: {exc}") from exc
    if data.format_version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: checkpoint format {data.format_version}, expected {CHECKPOINT_VERSION}")
    if kind is not None and ModelKind(kind).value != data.kind:
        raise DataError(f"{path}: holds a {data.kind} model, expected {ModelKind(kind).value}")
    if tuple(data.labels) != SubAlgorithm.labels():
        raise DataError(f"{path}: label set {data.labels} differs from {list(SubAlgorithm.labels())}")
    stored_vocabulary = Vocabulary(data.vocabulary)
    if stored_vocabulary.hash() != data.vocabulary_hash:
        raise DataError(f"{path}: vocabulary does not match its hash")
    if vocabulary is not None and vocabulary.hash() != data.vocabulary_hash:
        raise DataError(f"{path}: trained on a different vocabulary")
    model_config = ModelConfig.model_validate(data.hyperparameters)
    if config is not None and config != model_config:
        raise DataError(f"{path}: model hyperparameters differ from the configuration")
    model = BinaryRelevanceModel(ModelKind(data.kind), stored_vocabulary, model_config, [])
    for state in data.classifiers:
        stack = ClassifierStack(model.kind, len(stored_vocabulary), model_config)
        stack.load_state_dict({name: np.asarray(value, dtype=np.float64) for name, value in state.items()})
        model.classifiers.append(stack)
    if len(model.classifiers) != len(ALGORITHMS):
        raise DataError(f"{path}: {len(model.classifiers)} classifiers, expected {len(ALGORITHMS)}")
    return Checkpoint(model, data.corpus_hash, data.model_hash, data.config)
