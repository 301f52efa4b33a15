"""The network engine: layer math, initialization, forward/backward passes,
the adaptive learning-rate schedule, and the training loop.

Layout conventions
------------------
Maps are float64 arrays shaped (maps, side, side); batches prepend a batch
axis. Kernels for a stage are shaped (n_in, n_out, k, k); flattening before
the output layer is map-major, then row-major (C order). "Convolution" is
implemented as valid cross-correlation; the gradient computations below are
self-consistent with that choice, so it is unobservable from outside.

Model files start with the magic ``RNET`` and hold the architecture as
little-endian integers followed by all parameters as little-endian float64
in layer order (kernels in (input map, output map, row, col) order, then
biases; finally the output weight matrix row-major and its bias vector).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from reefnet.errors import EmptyClass, IndivisibleSide, InvalidPlan, ShapeMismatch

_MODEL_MAGIC = b"RNET"
_MODEL_VERSION = 1

# Lower guard keeping the learning rate strictly positive in floating point.
_LR_FLOOR = 1e-6


@dataclass(frozen=True)
class ConvLayerSpec:
    n_in: int
    n_out: int
    kernel: int

    def __post_init__(self):
        if min(self.n_in, self.n_out, self.kernel) < 1:
            raise ValueError("map counts and kernel side must be positive")


@dataclass(frozen=True)
class PoolLayerSpec:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("pool side must be positive")

    @property
    def weight(self) -> float:
        """Fixed, non-trainable block weight: every cell contributes 1/n^2."""
        return 1.0 / (self.n * self.n)


@dataclass(frozen=True)
class ActivationSpec:
    beta: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class NetworkSpec:
    input_side: int
    input_channels: int
    stages: tuple[tuple[ConvLayerSpec, PoolLayerSpec], ...]
    classes: int
    activation: ActivationSpec = ActivationSpec()

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.classes < 1:
            raise ValueError("need at least one class")
        if not self.stages:
            raise ValueError("need at least one conv/pool stage")


def plan_shapes(spec: NetworkSpec) -> list[int]:
    """Map sides after each stage, starting at the input side.

    Raises InvalidPlan with the full trace when a conv kernel exceeds the
    incoming side or a pooled side is not integral.
    """
    sides = [spec.input_side]
    trace = [f"input {spec.input_side}x{spec.input_side}x{spec.input_channels}"]
    expected_in = spec.input_channels
    for i, (conv, pool) in enumerate(spec.stages):
        side = sides[-1]
        if conv.n_in != expected_in:
            trace.append(f"stage {i}: expects {conv.n_in} input maps, gets {expected_in}")
            raise InvalidPlan("; ".join(trace))
        if conv.kernel > side:
            trace.append(f"stage {i}: kernel {conv.kernel} exceeds side {side}")
            raise InvalidPlan("; ".join(trace))
        after_conv = side - conv.kernel + 1
        trace.append(f"stage {i}: conv k={conv.kernel} -> {after_conv}")
        if after_conv % pool.n != 0:
            trace.append(f"stage {i}: pool n={pool.n} does not divide {after_conv}")
            raise InvalidPlan("; ".join(trace))
        after_pool = after_conv // pool.n
        trace.append(f"stage {i}: pool n={pool.n} -> {after_pool}")
        if after_pool < 1:
            raise InvalidPlan("; ".join(trace))
        sides.append(after_pool)
        expected_in = conv.n_out
    return sides


def flat_size(spec: NetworkSpec) -> int:
    sides = plan_shapes(spec)
    return sides[-1] * sides[-1] * spec.stages[-1][0].n_out


@dataclass
class NetworkState:
    """Trainable parameters; mutated in place between batches."""

    kernels: list[np.ndarray]
    biases: list[np.ndarray]
    out_weights: np.ndarray
    out_bias: np.ndarray
    rng_seed: int = 0

    def copy(self) -> "NetworkState":
        return NetworkState(
            kernels=[k.copy() for k in self.kernels],
            biases=[b.copy() for b in self.biases],
            out_weights=self.out_weights.copy(),
            out_bias=self.out_bias.copy(),
            rng_seed=self.rng_seed,
        )


@dataclass
class Gradients:
    kernels: list[np.ndarray]
    biases: list[np.ndarray]
    out_weights: np.ndarray
    out_bias: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1.0
    epochs: int = 10
    batch_size: int = 3
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.initial_lr <= 1.0:
            raise ValueError("initial learning rate must lie in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")


@dataclass(frozen=True)
class LrState:
    current: float
    iteration: int = 0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_error: float
    test_error: float
    learning_rate: float
    loss: float


def init_range(n_in: int, n_out: int, kernel: int) -> float:
    """Half-width of the uniform kernel-weight init interval."""
    fan_in = n_in * kernel * kernel
    fan_out = n_out * kernel * kernel
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_network(spec: NetworkSpec, seed: int) -> NetworkState:
    """Zero biases; kernel and output weights i.i.d. uniform on +-r where
    r = sqrt(6 / (fan_in + fan_out)). Deterministic for a given seed."""
    plan_shapes(spec)
    rng = np.random.default_rng(seed)
    kernels, biases = [], []
    for conv, _pool in spec.stages:
        r = init_range(conv.n_in, conv.n_out, conv.kernel)
        kernels.append(rng.uniform(-r, r, size=(conv.n_in, conv.n_out, conv.kernel, conv.kernel)))
        biases.append(np.zeros(conv.n_out))
    n_flat = flat_size(spec)
    r_out = math.sqrt(6.0 / (n_flat + spec.classes))
    out_w = rng.uniform(-r_out, r_out, size=(spec.classes, n_flat))
    out_b = np.zeros(spec.classes)
    return NetworkState(kernels, biases, out_w, out_b, rng_seed=seed)


def sigmoid(z: np.ndarray, beta: float = 1.0) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-beta * z))


def conv_forward(inputs: np.ndarray, kernels: np.ndarray, biases: np.ndarray,
                 act: ActivationSpec = ActivationSpec()) -> np.ndarray:
    """Fully connected valid correlation: every output map sees every input
    map, plus its bias, through the sigmoid."""
    inputs = np.asarray(inputs, dtype=np.float64)
    z, _ = _conv_accumulate(inputs[np.newaxis], kernels, biases)
    return sigmoid(z[0], act.beta)


def pool_forward(inputs: np.ndarray, layer: PoolLayerSpec) -> np.ndarray:
    """Non-overlapping n x n block averaging of each map."""
    inputs = np.asarray(inputs, dtype=np.float64)
    side = inputs.shape[-1]
    if side % layer.n != 0:
        raise IndivisibleSide(f"side {side} not divisible by pool {layer.n}")
    return _pool_batch(inputs[np.newaxis], layer.n)[0]


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> contiguous (B, H', W', C*k*k) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        x.shape[0], x.shape[2] - k + 1, x.shape[3] - k + 1, -1)


def _conv_accumulate(x: np.ndarray, kernels: np.ndarray, biases: np.ndarray):
    """Pre-activation maps for a batch; returns (z, the im2col matrix).

    The patch matrix is kept so the kernel gradient can reuse it without a
    second extraction pass.
    """
    n_in, n_out, k, _ = kernels.shape
    col = _im2col(x, k)
    w_mat = kernels.transpose(0, 2, 3, 1).reshape(n_in * k * k, n_out)
    z = (col.reshape(-1, w_mat.shape[0]) @ w_mat).reshape(col.shape[:3] + (n_out,)) + biases
    return np.moveaxis(z, 3, 1), col


def _pool_batch(a: np.ndarray, n: int) -> np.ndarray:
    b, c, h, w = a.shape
    return a.reshape(b, c, h // n, n, w // n, n).mean(axis=(3, 5))


@dataclass
class StageCache:
    col: np.ndarray      # im2col patch matrix, (B, h', w', n_in*k*k)
    pre: np.ndarray      # pre-activation accumulator, (B, n_out, h', w')
    post: np.ndarray     # sigmoid output
    pooled: np.ndarray


@dataclass
class ForwardCache:
    x: np.ndarray
    stages: list[StageCache]
    flat: np.ndarray
    out_pre: np.ndarray
    scores: np.ndarray


def _check_input(x: np.ndarray, spec: NetworkSpec):
    expected = (spec.input_channels, spec.input_side, spec.input_side)
    if x.shape[-3:] != expected:
        raise ShapeMismatch(f"input shape {x.shape[-3:]} does not match {expected}")


def forward_batch(x: np.ndarray, spec: NetworkSpec, state: NetworkState) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, spec)
    beta = spec.activation.beta
    a = x
    stages = []
    for i, (_conv, pool) in enumerate(spec.stages):
        z, col = _conv_accumulate(a, state.kernels[i], state.biases[i])
        post = sigmoid(z, beta)
        pooled = _pool_batch(post, pool.n)
        stages.append(StageCache(col, z, post, pooled))
        a = pooled
    flat = a.reshape(a.shape[0], -1)
    out_pre = flat @ state.out_weights.T + state.out_bias
    scores = sigmoid(out_pre, beta)
    return ForwardCache(x, stages, flat, out_pre, scores)


def forward(x: np.ndarray, spec: NetworkSpec, state: NetworkState):
    """Class scores in (0, 1) plus the cache backward() needs."""
    x = np.asarray(x, dtype=np.float64)
    cache = forward_batch(x[np.newaxis], spec, state)
    return cache.scores[0], cache


def loss(scores: np.ndarray, target_class: int) -> float:
    """Squared-error loss against the one-hot target: 1/2 sum (t - y)^2."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= target_class < scores.shape[-1]:
        raise ValueError(f"target class {target_class} out of range")
    t = np.zeros_like(scores)
    t[target_class] = 1.0
    return float(0.5 * np.sum((t - scores) ** 2))


def _one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    t = np.zeros((labels.size, classes))
    t[np.arange(labels.size), labels] = 1.0
    return t


def backward_batch(cache: ForwardCache, labels: np.ndarray, spec: NetworkSpec,
                   state: NetworkState) -> Gradients:
    """Mean gradient over the batch of the squared-error loss."""
    beta = spec.activation.beta
    batch = cache.scores.shape[0]
    targets = _one_hot(np.asarray(labels), spec.classes)

    y = cache.scores
    d_out = (y - targets) / batch * (beta * y * (1.0 - y))
    g_out_w = d_out.T @ cache.flat
    g_out_b = d_out.sum(axis=0)

    last = cache.stages[-1].pooled.shape
    delta = (d_out @ state.out_weights).reshape(last)

    g_kernels: list[np.ndarray] = [None] * len(spec.stages)
    g_biases: list[np.ndarray] = [None] * len(spec.stages)
    for i in range(len(spec.stages) - 1, -1, -1):
        conv, pool = spec.stages[i]
        stage = cache.stages[i]
        n = pool.n
        # Mean pooling spreads the gradient uniformly over each block.
        d_post = np.repeat(np.repeat(delta, n, axis=2), n, axis=3) * pool.weight
        a = stage.post
        d_pre = d_post * (beta * a * (1.0 - a))

        k = conv.kernel
        d_mat = d_pre.transpose(0, 2, 3, 1).reshape(-1, conv.n_out)
        gk = stage.col.reshape(-1, conv.n_in * k * k).T @ d_mat
        g_kernels[i] = gk.reshape(conv.n_in, k, k, conv.n_out).transpose(0, 3, 1, 2)
        g_biases[i] = d_pre.sum(axis=(0, 2, 3))

        if i > 0:
            pad = k - 1
            padded = np.pad(d_pre, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
            col_d = _im2col(padded, k)
            flipped = state.kernels[i][:, :, ::-1, ::-1]
            kf = flipped.transpose(1, 2, 3, 0).reshape(conv.n_out * k * k, conv.n_in)
            dx = (col_d.reshape(-1, kf.shape[0]) @ kf).reshape(col_d.shape[:3] + (conv.n_in,))
            delta = np.moveaxis(dx, 3, 1)

    return Gradients(g_kernels, g_biases, g_out_w, g_out_b)


def backward(cache: ForwardCache, target_class: int, spec: NetworkSpec,
             state: NetworkState) -> Gradients:
    """Gradients for a single sample's forward cache."""
    return backward_batch(cache, np.array([target_class]), spec, state)


def next_learning_rate(state: LrState, epoch_error: float, total_epochs: int) -> LrState:
    """One step of the adaptive schedule.

    The previous rate is divided by floor(n / (N/2)) + 1 (n the new
    iteration index, N the total count), the epoch error is added, and the
    result is clamped into (0, 1]; the lower end is guarded at 1e-6 so the
    open interval survives floating point.
    """
    n = state.iteration + 1
    divisor = math.floor(n / (total_epochs / 2.0)) + 1
    value = state.current / divisor + epoch_error
    value = min(value, 1.0)
    value = max(value, _LR_FLOOR)
    return LrState(current=value, iteration=n)


def _apply_step(state: NetworkState, grads: Gradients, lr: float):
    for i in range(len(state.kernels)):
        state.kernels[i] -= lr * grads.kernels[i]
        state.biases[i] -= lr * grads.biases[i]
    state.out_weights -= lr * grads.out_weights
    state.out_bias -= lr * grads.out_bias


def evaluate_error(samples, spec: NetworkSpec, state: NetworkState,
                   chunk: int = 32) -> float:
    """Misclassification rate under argmax over (x, label) samples."""
    if not samples:
        return float("nan")
    wrong = 0
    for start in range(0, len(samples), chunk):
        part = samples[start:start + chunk]
        x = np.stack([s[0] for s in part])
        labels = np.array([s[1] for s in part])
        scores = forward_batch(x, spec, state).scores
        wrong += int(np.sum(np.argmax(scores, axis=1) != labels))
    return wrong / len(samples)


def train(train_samples, spec: NetworkSpec, config: TrainConfig,
          test_samples=(), init_seed: int = 0) -> tuple[NetworkState, list[EpochRecord]]:
    """Stochastic gradient descent with the adaptive learning-rate schedule.

    ``train_samples`` and ``test_samples`` are sequences of
    (input array (channels, side, side), class id). Each epoch reshuffles
    with the seeded generator, steps on mean batch gradients (final short
    batch included), then feeds the epoch's misclassification rate into the
    learning-rate update. Fully deterministic for fixed seeds.
    """
    train_samples = [(np.asarray(x, dtype=np.float64), int(label)) for x, label in train_samples]
    test_samples = [(np.asarray(x, dtype=np.float64), int(label)) for x, label in test_samples]
    if not train_samples:
        raise EmptyClass("no training samples")
    present = {label for _x, label in train_samples}
    for c in range(spec.classes):
        if c not in present:
            raise EmptyClass(f"class {c} has no training samples")
    _check_input(train_samples[0][0], spec)

    state = init_network(spec, init_seed)
    shuffle_rng = np.random.default_rng(config.shuffle_seed)
    lr = LrState(current=config.initial_lr, iteration=0)
    history: list[EpochRecord] = []

    inputs = np.stack([x for x, _ in train_samples])
    labels = np.array([label for _, label in train_samples])
    n = len(train_samples)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        wrong = 0
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            x = inputs[batch_idx]
            y = labels[batch_idx]
            cache = forward_batch(x, spec, state)
            grads = backward_batch(cache, y, spec, state)

            targets = _one_hot(y, spec.classes)
            loss_sum += float(0.5 * np.sum((targets - cache.scores) ** 2))
            wrong += int(np.sum(np.argmax(cache.scores, axis=1) != y))

            _apply_step(state, grads, lr.current)

        train_error = wrong / n
        test_error = evaluate_error(test_samples, spec, state) if test_samples else float("nan")
        lr = next_learning_rate(lr, train_error, config.epochs)
        history.append(EpochRecord(epoch, train_error, test_error, lr.current, loss_sum / n))

    return state, history


def predict(x: np.ndarray, spec: NetworkSpec, state: NetworkState) -> tuple[int, np.ndarray]:
    """Argmax class (ties to the smallest index) and the raw scores."""
    scores, _cache = forward(x, spec, state)
    return int(np.argmax(scores)), scores


def write_history(history, path):
    """History CSV: epoch,train_error,test_error,learning_rate,loss."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_error,test_error,learning_rate,loss\n")
        for rec in history:
            fh.write(f"{rec.epoch},{rec.train_error!r},{rec.test_error!r},"
                     f"{rec.learning_rate!r},{rec.loss!r}\n")


def save_model(path, spec: NetworkSpec, state: NetworkState):
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<H", _MODEL_VERSION))
        fh.write(struct.pack("<III", spec.input_side, spec.input_channels, len(spec.stages)))
        for conv, pool in spec.stages:
            fh.write(struct.pack("<IIII", conv.n_in, conv.n_out, conv.kernel, pool.n))
        fh.write(struct.pack("<I", spec.classes))
        fh.write(struct.pack("<d", spec.activation.beta))
        fh.write(struct.pack("<Q", state.rng_seed))
        for kernels, biases in zip(state.kernels, state.biases):
            fh.write(np.ascontiguousarray(kernels, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(biases, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.out_weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.out_bias, dtype="<f8").tobytes())


def load_model(path) -> tuple[NetworkSpec, NetworkState]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MODEL_MAGIC:
            raise ValueError("not a model file (bad magic)")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _MODEL_VERSION:
            raise ValueError(f"unsupported model version {version}")
        side, channels, n_stages = struct.unpack("<III", fh.read(12))
        stages = []
        for _ in range(n_stages):
            n_in, n_out, kernel, pool_n = struct.unpack("<IIII", fh.read(16))
            stages.append((ConvLayerSpec(n_in, n_out, kernel), PoolLayerSpec(pool_n)))
        (classes,) = struct.unpack("<I", fh.read(4))
        (beta,) = struct.unpack("<d", fh.read(8))
        (seed,) = struct.unpack("<Q", fh.read(8))
        spec = NetworkSpec(side, channels, tuple(stages), classes, ActivationSpec(beta))

        def read_array(shape):
            count = int(np.prod(shape))
            return np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).astype(np.float64)

        kernels, biases = [], []
        for conv, _pool in spec.stages:
            kernels.append(read_array((conv.n_in, conv.n_out, conv.kernel, conv.kernel)))
            biases.append(read_array((conv.n_out,)))
        n_flat = flat_size(spec)
        out_w = read_array((classes, n_flat))
        out_b = read_array((classes,))
    return spec, NetworkState(kernels, biases, out_w, out_b, rng_seed=seed)
