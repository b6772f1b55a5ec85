"""
The jamming classifier: a three-block CNN with softmax scores, SGDM training,
layer-wise cascade training, gradient checking and the SSBNN001 model file
"""

import copy
import struct
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ssb_guard.config import ModelLayout, TrainConfig
from ssb_guard.constants import (
    BATCH_NORM_EPS,
    BATCH_NORM_MOMENTUM,
    MODEL_MAGIC,
    MODEL_VERSION,
    PROBABILITY_FLOOR,
)
from ssb_guard.exceptions import FileMissingException, FormatException, ValidationException
from ssb_guard.logger import get_logger
from ssb_guard.validators import validate_same_length

logger = get_logger(__name__)

# Layer tags of the model file
TAG_INPUT = 0
TAG_CONV = 1
TAG_BATCH_NORM = 2
TAG_LINEAR = 3

_HEADER = struct.Struct("<8sI")


@dataclass(frozen=True)
class ScorePair:
    """Softmax output of one observation"""

    zeta_h0: float
    zeta_h1: float


@dataclass(frozen=True)
class TrainLogEntry:
    stage: int
    epoch: int
    iteration: int
    train_loss: float
    validation_accuracy: float | None = None


@dataclass
class TrainResult:
    model: "JammingCNN"
    log: list[TrainLogEntry] = field(default_factory=list)

    @property
    def final_validation_accuracy(self) -> float | None:
        for entry in reversed(self.log):
            if entry.validation_accuracy is not None:
                return entry.validation_accuracy
        return None


# ============================================================================
# Model
# ============================================================================


def _conv_block(in_channels: int, out_channels: int, kernel: tuple[int, int]) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=kernel),
        nn.BatchNorm2d(out_channels, eps=BATCH_NORM_EPS, momentum=BATCH_NORM_MOMENTUM),
        nn.ReLU(),
    )


def _dense_head(in_features: int, hidden_units: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Flatten(),
        nn.Linear(in_features, hidden_units),
        nn.ReLU(),
        nn.Linear(hidden_units, 2),
    )


def he_uniform_init(module: nn.Module, seed: int) -> None:
    """
    Seeded He-uniform weights (bound sqrt(6 / fan_in)), zero biases, unit BN gains

    The global torch RNG is left untouched.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for layer in module.modules():
            if isinstance(layer, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_uniform_(layer.weight, a=0.0, nonlinearity="relu")
                if layer.bias is not None:
                    nn.init.zeros_(layer.bias)
            elif isinstance(layer, nn.BatchNorm2d):
                nn.init.ones_(layer.weight)
                nn.init.zeros_(layer.bias)


class JammingCNN(nn.Module):
    """
    conv -> batch norm -> ReLU (x3) -> flatten -> fc -> ReLU -> fc(2)

    Convolutions use valid padding and stride 1. Inputs are standardized per
    row with statistics fitted on the training set (identity until fitted).
    """

    def __init__(self, layout: ModelLayout, input_shape: tuple[int, int], seed: int = 0):
        super().__init__()
        self.layout = layout
        self.input_shape = (int(input_shape[0]), int(input_shape[1]))
        rows, cols = self.input_shape

        try:
            channels, out_rows, out_cols = layout.feature_shape(rows, cols)
        except ValueError as exc:
            raise ValidationException("input_shape", str(exc)) from exc

        self.register_buffer("input_mean", torch.zeros(rows, 1))
        self.register_buffer("input_scale", torch.ones(rows, 1))

        in_channels = 1
        blocks = []
        for out_channels, kernel in zip(layout.conv_channels, layout.conv_kernels):
            blocks.append(_conv_block(in_channels, out_channels, kernel))
            in_channels = out_channels
        self.blocks = nn.ModuleList(blocks)
        self.head = _dense_head(channels * out_rows * out_cols, layout.hidden_units)

        he_uniform_init(self, seed)

    @property
    def dtype(self) -> torch.dtype:
        return self.head[1].weight.dtype

    def as_batch(self, tensors: np.ndarray | torch.Tensor) -> torch.Tensor:
        """(N, rows, cols) or (N, 1, rows, cols) input as a model-dtype tensor"""
        x = tensors if torch.is_tensor(tensors) else torch.as_tensor(np.asarray(tensors))
        x = x.to(self.dtype)
        if x.ndim == 3:
            x = x.unsqueeze(1)
        if x.ndim != 4 or x.shape[1] != 1 or tuple(x.shape[2:]) != self.input_shape:
            raise ValidationException(
                "batch", f"Expected (N, {self.input_shape[0]}, {self.input_shape[1]}), got "
                f"{tuple(x.shape)}"
            )
        return x

    def fit_input_normalization(self, tensors: np.ndarray) -> None:
        """Per-row mean and standard deviation over samples and columns"""
        x = np.asarray(tensors, dtype=np.float64)
        mean = x.mean(axis=(0, 2))
        std = x.std(axis=(0, 2))
        std = np.where(std > 0.0, std, 1.0)
        with torch.no_grad():
            self.input_mean.copy_(torch.as_tensor(mean).reshape(-1, 1))
            self.input_scale.copy_(torch.as_tensor(std).reshape(-1, 1))

    def features(self, x: torch.Tensor, n_blocks: int = 3) -> torch.Tensor:
        """Output of the first n_blocks conv blocks"""
        x = (x - self.input_mean) / self.input_scale
        for block in self.blocks[:n_blocks]:
            x = block(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-softmax logits, column 0 for H0 and column 1 for H1"""
        return self.head(self.features(x))

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        return softmax_scores(self(x))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def layer_records(self) -> Iterator[tuple[int, tuple[int, ...], list[torch.Tensor]]]:
        """(tag, shape, tensors) per layer in file order"""
        rows, cols = self.input_shape
        yield TAG_INPUT, (rows, cols), [self.input_mean, self.input_scale]
        for block in self.blocks:
            conv, bn = block[0], block[1]
            yield TAG_CONV, tuple(conv.weight.shape), [conv.weight, conv.bias]
            yield TAG_BATCH_NORM, (bn.num_features,), [
                bn.weight,
                bn.bias,
                bn.running_mean,
                bn.running_var,
            ]
        for layer in (self.head[1], self.head[3]):
            yield TAG_LINEAR, tuple(layer.weight.shape), [layer.weight, layer.bias]


def softmax_scores(logits: torch.Tensor) -> torch.Tensor:
    """Softmax in float64 so every pair sums to 1 within 1e-9"""
    return F.softmax(logits.to(torch.float64), dim=1)


def predict_scores(
    model: JammingCNN,
    tensors: np.ndarray,
    batch_size: int = 256,
) -> np.ndarray:
    """
    Inference-mode score pairs

    Returns:
        (N, 2) float64 array of (zeta_h0, zeta_h1)
    """
    n = len(tensors)
    if n == 0:
        return np.zeros((0, 2))
    x = model.as_batch(tensors)
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, n, batch_size):
            out.append(model.scores(x[start : start + batch_size]))
    return torch.cat(out).numpy()


def score_pair(scores: np.ndarray) -> ScorePair:
    return ScorePair(zeta_h0=float(scores[0]), zeta_h1=float(scores[1]))


# ============================================================================
# Loss and optimizer
# ============================================================================


def nll_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """
    -mean log(probability of the true class), natural log

    Probabilities are clamped at 1e-12 before the log.
    """
    log_probs = torch.log(scores.clamp_min(PROBABILITY_FLOOR))
    return F.nll_loss(log_probs, labels.to(torch.int64))


def sgdm_step(
    params: list[torch.Tensor],
    gradients: list[torch.Tensor] | tuple[torch.Tensor, ...],
    velocity: list[torch.Tensor],
    lr: float,
    momentum: float,
) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
    """
    In place: v <- momentum * v - lr * g; theta <- theta + v

    Raises:
        ValidationException: If the three lists are not shape-matched
    """
    validate_same_length(params, gradients, "gradients")
    validate_same_length(params, velocity, "velocity")
    with torch.no_grad():
        for p, g, v in zip(params, gradients, velocity):
            if p.shape != g.shape or p.shape != v.shape:
                raise ValidationException(
                    "gradients", f"Shape mismatch {tuple(p.shape)} vs {tuple(g.shape)}"
                )
            v.mul_(momentum).sub_(lr * g)
            p.add_(v)
    return params, velocity


# ============================================================================
# Training
# ============================================================================

ForwardFn = Callable[[torch.Tensor, bool], torch.Tensor]


def _check_dataset(tensors: np.ndarray, labels: np.ndarray) -> None:
    validate_same_length(tensors, labels, "labels")
    if len(np.unique(labels)) < 2:
        raise ValidationException("labels", "Training data must contain both H0 and H1")


def _split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(max(int(round(n * fraction)), 1), n - 1)
    return order[n_val:], order[:n_val]


def _accuracy(forward: ForwardFn, x: torch.Tensor, y: torch.Tensor) -> float:
    if len(y) == 0:
        return float("nan")
    with torch.no_grad():
        predicted = forward(x, False).argmax(dim=1)
    return float((predicted == y).double().mean())


def _run_sgdm(
    forward: ForwardFn,
    parameters: list[torch.Tensor],
    data: tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor],
    cfg: TrainConfig,
    stage: int,
    log: list[TrainLogEntry],
) -> None:
    x_train, y_train, x_val, y_val = data
    rng = np.random.default_rng([cfg.seed, stage])
    velocity = [torch.zeros_like(p) for p in parameters]
    iteration = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = torch.as_tensor(rng.permutation(len(y_train)))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            index = order[start : start + cfg.batch_size]
            loss = nll_loss(forward(x_train[index], True), y_train[index])
            gradients = torch.autograd.grad(loss, parameters)
            sgdm_step(parameters, gradients, velocity, cfg.learning_rate, cfg.momentum)

            iteration += 1
            accuracy = None
            if iteration % cfg.validation_frequency == 0:
                accuracy = _accuracy(forward, x_val, y_val)
            losses.append(float(loss))
            log.append(TrainLogEntry(stage, epoch, iteration, float(loss), accuracy))

        logger.info(
            "Epoch finished",
            extra={
                "stage": stage,
                "epoch": epoch,
                "mean_loss": float(np.mean(losses)) if losses else None,
                "validation_accuracy": _accuracy(forward, x_val, y_val),
            },
        )


def _prepare(
    tensors: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    layout: ModelLayout | None,
) -> tuple[JammingCNN, tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]]:
    tensors = np.asarray(tensors)
    labels = np.asarray(labels, dtype=np.int64)
    _check_dataset(tensors, labels)

    train_idx, val_idx = _split(len(labels), cfg.validation_fraction, cfg.seed)
    model = JammingCNN(layout or ModelLayout(), tensors.shape[1:], seed=cfg.seed)
    model.fit_input_normalization(tensors[train_idx])

    x = model.as_batch(tensors)
    y = torch.as_tensor(labels)
    data = (x[train_idx], y[train_idx], x[val_idx], y[val_idx])
    logger.info(
        "Training data split",
        extra={"n_train": int(train_idx.size), "n_validation": int(val_idx.size)},
    )
    return model, data


def train(
    tensors: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    layout: ModelLayout | None = None,
) -> TrainResult:
    """
    End-to-end SGDM training

    Args:
        tensors: (N, rows, cols) observation tensors
        labels: 0 for H0, 1 for H1
        cfg: Hyperparameters, including the validation split and seed
        layout: Channel counts and kernels (ModelLayout defaults when None)

    Returns:
        Trained model in inference mode plus one log entry per iteration

    Raises:
        ValidationException: If only one class is present
    """
    model, data = _prepare(tensors, labels, cfg, layout)

    def forward(x: torch.Tensor, training: bool) -> torch.Tensor:
        model.train(training)
        return model.scores(x)

    log: list[TrainLogEntry] = []
    _run_sgdm(forward, list(model.parameters()), data, cfg, stage=0, log=log)
    model.eval()
    return TrainResult(model=model, log=log)


def cascade_train(
    tensors: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    layout: ModelLayout | None = None,
    stage_callback: Callable[[int, JammingCNN], None] | None = None,
) -> TrainResult:
    """
    Layer-wise training from the lowest conv block up

    Stage i (1..3) trains conv block i with a temporary flatten -> fc -> ReLU
    -> fc(2) head on top of the frozen blocks below it, then freezes block i.
    A final stage trains the real head on the frozen conv features.

    Args:
        stage_callback: Called with (stage, model) after every stage
    """
    model, data = _prepare(tensors, labels, cfg, layout)
    rows, cols = model.input_shape
    log: list[TrainLogEntry] = []

    for stage, block in enumerate(model.blocks, start=1):
        channels, out_rows, out_cols = model.layout.feature_shape(rows, cols, n_blocks=stage)
        head = _dense_head(channels * out_rows * out_cols, model.layout.hidden_units)
        head.to(model.dtype)
        he_uniform_init(head, cfg.seed + stage)

        def forward(
            x: torch.Tensor,
            training: bool,
            stage: int = stage,
            block: nn.Module = block,
            head: nn.Module = head,
        ) -> torch.Tensor:
            with torch.no_grad():
                for frozen in model.blocks[: stage - 1]:
                    frozen.eval()
                below = model.features(x, n_blocks=stage - 1)
            block.train(training)
            head.train(training)
            return softmax_scores(head(block(below)))

        params = list(block.parameters()) + list(head.parameters())
        _run_sgdm(forward, params, data, cfg, stage=stage, log=log)

        block.requires_grad_(False)
        block.eval()
        if stage_callback is not None:
            stage_callback(stage, model)

    def forward_head(x: torch.Tensor, training: bool) -> torch.Tensor:
        with torch.no_grad():
            model.blocks.eval()
            below = model.features(x)
        model.head.train(training)
        return softmax_scores(model.head(below))

    final_stage = len(model.blocks) + 1
    _run_sgdm(forward_head, list(model.head.parameters()), data, cfg, final_stage, log)
    if stage_callback is not None:
        stage_callback(final_stage, model)

    model.requires_grad_(True)
    model.eval()
    return TrainResult(model=model, log=log)


# ============================================================================
# Gradient check
# ============================================================================


def gradient_errors(
    model: JammingCNN,
    batch: np.ndarray,
    labels: np.ndarray,
    step: float = 1e-5,
) -> dict[str, float]:
    """
    Max relative error between backprop and central differences per parameter

    Runs on a float64 copy of the model in training mode (batch statistics).
    The relative error of one entry is |a - n| / max(|a|, |n|, 1e-4).
    """
    replica = copy.deepcopy(model).double()
    replica.train()
    x = replica.as_batch(batch)
    y = torch.as_tensor(np.asarray(labels, dtype=np.int64))

    def loss() -> torch.Tensor:
        return nll_loss(replica.scores(x), y)

    named = list(replica.named_parameters())
    analytic = torch.autograd.grad(loss(), [p for _, p in named])

    errors: dict[str, float] = {}
    with torch.no_grad():
        for (name, param), grad in zip(named, analytic):
            flat = param.view(-1)
            numeric = torch.zeros_like(flat)
            for j in range(flat.numel()):
                original = float(flat[j])
                flat[j] = original + step
                plus = float(loss())
                flat[j] = original - step
                minus = float(loss())
                flat[j] = original
                numeric[j] = (plus - minus) / (2.0 * step)
            a = grad.reshape(-1)
            scale = torch.maximum(torch.maximum(a.abs(), numeric.abs()), torch.full_like(a, 1e-4))
            errors[name] = float(((a - numeric).abs() / scale).max())
    return errors


def gradient_check(
    model: JammingCNN,
    batch: np.ndarray,
    labels: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Largest relative error over every parameter group"""
    return max(gradient_errors(model, batch, labels, step).values())


# ============================================================================
# Model file
# ============================================================================


def save_model(model: JammingCNN, path: str | Path) -> None:
    """
    Write the SSBNN001 file

    Layout: magic, version u32, then per layer a u8 tag, u32 shape values and
    little-endian float32 parameters in declaration order.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION))
        for tag, shape, tensors in model.layer_records():
            fh.write(struct.pack("<B", tag))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            for tensor in tensors:
                fh.write(tensor.detach().cpu().numpy().astype("<f4").tobytes())
    logger.info("Saved model", extra={"path": str(path), "parameters": model.parameter_count()})


_SHAPE_WIDTH = {TAG_INPUT: 2, TAG_CONV: 4, TAG_BATCH_NORM: 1, TAG_LINEAR: 2}


class _Reader:
    def __init__(self, path: Path, data: bytes):
        self.path = path
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatException(self.path, f"truncated {what}", offset=self.offset)
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.data)


def _read_records(path: Path) -> list[tuple[int, tuple[int, ...], list[np.ndarray], int]]:
    reader = _Reader(path, path.read_bytes())
    magic, version = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    if magic != MODEL_MAGIC:
        raise FormatException(path, f"bad magic {magic!r}", offset=0)
    if version != MODEL_VERSION:
        raise FormatException(path, f"unsupported version {version}", offset=8)

    records = []
    while not reader.exhausted:
        start = reader.offset
        (tag,) = struct.unpack("<B", reader.take(1, "layer tag"))
        if tag not in _SHAPE_WIDTH:
            raise FormatException(path, f"unknown layer tag {tag}", offset=start)
        width = _SHAPE_WIDTH[tag]
        shape = struct.unpack(f"<{width}I", reader.take(4 * width, "layer shape"))

        if tag == TAG_INPUT:
            sizes = [shape[0], shape[0]]
        elif tag == TAG_CONV:
            sizes = [int(np.prod(shape)), shape[0]]
        elif tag == TAG_BATCH_NORM:
            sizes = [shape[0]] * 4
        else:
            sizes = [shape[0] * shape[1], shape[0]]
        arrays = [
            np.frombuffer(reader.take(4 * size, "parameters"), dtype="<f4").copy()
            for size in sizes
        ]
        records.append((tag, shape, arrays, start))
    return records


def load_model(path: str | Path) -> JammingCNN:
    """
    Read an SSBNN001 file back into an inference-mode model

    Raises:
        FormatException: Bad magic/version, truncation or an inconsistent layer chain
        FileMissingException: No file at path
    """
    path = Path(path)
    try:
        records = _read_records(path)
    except FileNotFoundError as exc:
        raise FileMissingException(path) from exc

    tags = [record[0] for record in records]
    expected_tags = [TAG_INPUT] + [TAG_CONV, TAG_BATCH_NORM] * 3 + [TAG_LINEAR] * 2
    if tags != expected_tags:
        raise FormatException(path, f"unexpected layer sequence {tags}")

    convs = [record[1] for record in records if record[0] == TAG_CONV]
    linears = [record[1] for record in records if record[0] == TAG_LINEAR]
    layout = ModelLayout(
        conv_channels=tuple(shape[0] for shape in convs),
        conv_kernels=tuple((shape[2], shape[3]) for shape in convs),
        hidden_units=linears[0][0],
    )
    rows, cols = records[0][1]
    try:
        model = JammingCNN(layout, (rows, cols))
    except ValidationException as exc:
        raise FormatException(path, exc.message) from exc

    with torch.no_grad():
        for (tag, shape, tensors), (_, stored_shape, arrays, offset) in zip(
            model.layer_records(), records
        ):
            if tuple(shape) != tuple(stored_shape):
                raise FormatException(
                    path, f"layer shape {stored_shape} does not chain (expected {shape})", offset
                )
            for tensor, array in zip(tensors, arrays):
                tensor.copy_(torch.from_numpy(array.astype(np.float32)).reshape(tensor.shape))

    model.eval()
    logger.info("Loaded model", extra={"path": str(path), "layout": layout.model_dump()})
    return model
