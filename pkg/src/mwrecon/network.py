"""Tiny scan-specific convolutional networks trained from scratch in numpy.

Networks map real/imaginary-split multi-coil k-space windows to the values
of the missing rows between acquired lines.  All convolutions are valid (no
padding); ky taps may be spaced ``dilation`` rows apart so they ride the
acquired-line lattice.  Complex data is handled as paired real channels and
all weights are real.  An optional parallel linear convolution (the
``skip`` path) realizes residual variants: its output is cropped to the
main chain's spatial grid and added.

Training is full batch: the source tensor never changes between
iterations, so its patch matrix is extracted once and reused.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "identity")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    kx_width: int
    ky_taps: int
    activation: str = "relu"

    def __post_init__(self):
        if self.out_channels < 1 or self.kx_width < 1 or self.ky_taps < 1:
            raise ValueError(f"layer dimensions must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetworkArch:
    """Ordered conv layers plus an optional linear skip path.

    Hidden layers use ReLU; the final layer (and the skip) are linear.
    ``dilation`` is the ky tap spacing in input rows.
    """

    in_channels: int
    layers: tuple[LayerSpec, ...]
    dilation: int = 1
    skip: LayerSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be positive, got {self.in_channels}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for spec in self.layers[:-1]:
            if spec.activation != "relu":
                raise ValueError("hidden layers must use relu")
        if self.layers[-1].activation != "identity":
            raise ValueError("final layer must be linear (identity activation)")
        if self.skip is not None:
            if self.skip.activation != "identity":
                raise ValueError("skip path must be linear (identity activation)")
            if self.skip.out_channels != self.out_channels:
                raise ValueError("skip path must match the output channel count")
            if self.skip_row_offset < 0 or self.skip.ky_taps - 1 + self.skip_row_offset > self.ky_taps_excess:
                raise ValueError("skip ky taps do not fit inside the main receptive field")
            if self.skip_col_offset < 0 or self.skip.kx_width + self.skip_col_offset > self.rf_cols:
                raise ValueError("skip kx width does not fit inside the main receptive field")

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    @property
    def ky_taps_excess(self) -> int:
        """Total ky taps consumed beyond one row (receptive field in tap units)."""
        return sum(spec.ky_taps - 1 for spec in self.layers)

    @property
    def rf_rows(self) -> int:
        return self.ky_taps_excess * self.dilation + 1

    @property
    def rf_cols(self) -> int:
        return sum(spec.kx_width - 1 for spec in self.layers) + 1

    @property
    def target_row_gap(self) -> int:
        """Index of the inter-tap gap the targets sit in (centered per layer)."""
        return sum((spec.ky_taps - 1) // 2 for spec in self.layers)

    @property
    def target_col_offset(self) -> int:
        """Readout offset of the target column within the receptive field."""
        return sum((spec.kx_width - 1) // 2 for spec in self.layers)

    @property
    def skip_row_offset(self) -> int:
        """Skip output crop offset along ky, in tap units."""
        if self.skip is None:
            return 0
        return self.target_row_gap - (self.skip.ky_taps - 1) // 2

    @property
    def skip_col_offset(self) -> int:
        if self.skip is None:
            return 0
        return self.target_col_offset - (self.skip.kx_width - 1) // 2

    def output_shape(self, height: int, width: int) -> tuple[int, int]:
        """Valid-convolution output dims for an input of the given size."""
        oh = height - self.ky_taps_excess * self.dilation
        ow = width - (self.rf_cols - 1)
        if oh < 1 or ow < 1:
            raise ValueError(
                f"input {height}x{width} is smaller than the receptive field "
                f"{self.rf_rows}x{self.rf_cols}"
            )
        return oh, ow


@dataclass(frozen=True)
class ScanNetwork:
    """Realized weights for a :class:`NetworkArch`; immutable once built."""

    arch: NetworkArch
    weights: tuple[np.ndarray, ...]
    skip_weight: np.ndarray | None
    seed: int

    def __post_init__(self):
        frozen = []
        in_ch = self.arch.in_channels
        if len(self.weights) != len(self.arch.layers):
            raise ValueError("weight count does not match layer count")
        for w, spec in zip(self.weights, self.arch.layers):
            expected = (spec.out_channels, in_ch, spec.ky_taps, spec.kx_width)
            frozen.append(_frozen_weight(w, expected))
            in_ch = spec.out_channels
        object.__setattr__(self, "weights", tuple(frozen))
        if (self.skip_weight is None) != (self.arch.skip is None):
            raise ValueError("skip weight presence must match the architecture")
        if self.skip_weight is not None:
            spec = self.arch.skip
            expected = (spec.out_channels, self.arch.in_channels, spec.ky_taps, spec.kx_width)
            object.__setattr__(self, "skip_weight", _frozen_weight(self.skip_weight, expected))


def _frozen_weight(w, expected_shape) -> np.ndarray:
    arr = np.array(w, dtype=np.float64, copy=True)
    if arr.shape != expected_shape:
        raise ValueError(f"weight shape {arr.shape} does not match {expected_shape}")
    if not np.isfinite(arr).all():
        raise ValueError("weights contain non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"  # "adam" or "sgd_momentum"
    lr: float = 0.001
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iters: int = 1000

    def __post_init__(self):
        if self.kind not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError(f"adam eps must be positive, got {self.eps}")
        if self.iters < 1:
            raise ValueError(f"iteration count must be >= 1, got {self.iters}")


@dataclass(frozen=True)
class TrainGeometry:
    """Ties target positions to source positions.

    A target channel pair (re, im) for offset ``m`` at output position
    (i, j) corresponds to the source row ``row_gap`` tap gaps below the
    window's top tap, ``m`` rows into that gap, at source column
    ``j + col_offset``.
    """

    R: int
    row_gap: int
    col_offset: int


@dataclass(frozen=True)
class TrainingSet:
    """Full-batch training tensors: [batch, ch, ky, kx] sources and targets."""

    sources: np.ndarray
    targets: np.ndarray
    geometry: TrainGeometry

    def __post_init__(self):
        src = np.array(self.sources, dtype=np.float64, copy=True)
        tgt = np.array(self.targets, dtype=np.float64, copy=True)
        if src.ndim != 4 or tgt.ndim != 4:
            raise ValueError("sources and targets must be [batch, ch, ky, kx]")
        if src.shape[0] != tgt.shape[0]:
            raise ValueError("sources and targets disagree on batch size")
        if not (np.isfinite(src).all() and np.isfinite(tgt).all()):
            raise ValueError("training tensors contain non-finite values")
        src.flags.writeable = False
        tgt.flags.writeable = False
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "targets", tgt)

    @property
    def batch_size(self) -> int:
        return self.sources.shape[0]


# ---------------------------------------------------------------------------
# convolution primitives (valid, stride 1, ky dilation)

def _im2col(x: np.ndarray, ky_taps: int, kx_width: int, dilation: int):
    """Patch matrix [N*OH*OW, C*ky_taps*kx_width] plus the (N, OH, OW) shape."""
    span = (ky_taps - 1) * dilation + 1
    win = sliding_window_view(x, (span, kx_width), axis=(2, 3))[:, :, :, :, ::dilation, :]
    n, _, oh, ow = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, -1)
    return cols, (n, oh, ow)


def _conv_from_cols(cols: np.ndarray, shape, w: np.ndarray) -> np.ndarray:
    n, oh, ow = shape
    out = cols @ w.reshape(w.shape[0], -1).T
    return out.reshape(n, oh, ow, w.shape[0]).transpose(0, 3, 1, 2)


def _conv_grad_w(cols: np.ndarray, d_out: np.ndarray, w_shape) -> np.ndarray:
    n, o = d_out.shape[0], d_out.shape[1]
    d_mat = d_out.transpose(0, 2, 3, 1).reshape(-1, o)
    return (d_mat.T @ cols).reshape(w_shape)


def _conv_grad_x(w: np.ndarray, d_out: np.ndarray, dilation: int) -> np.ndarray:
    """Gradient w.r.t. the conv input: full correlation with the rotated kernel."""
    kt, kw = w.shape[2], w.shape[3]
    pad_y, pad_x = (kt - 1) * dilation, kw - 1
    d_pad = np.pad(d_out, ((0, 0), (0, 0), (pad_y, pad_y), (pad_x, pad_x)))
    cols, shape = _im2col(d_pad, kt, kw, dilation)
    w_rot = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # [C, O, kt, kw]
    return _conv_from_cols(cols, shape, w_rot)


def conv2d_dilated(x: np.ndarray, w: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Valid cross-correlation of [N, C, H, W] input with [O, C, kt, kw] kernel."""
    cols, shape = _im2col(x, w.shape[2], w.shape[3], dilation)
    return _conv_from_cols(cols, shape, w)


# ---------------------------------------------------------------------------
# network evaluation

def _skip_crop(arch: NetworkArch, out_shape):
    dy = arch.skip_row_offset * arch.dilation
    dx = arch.skip_col_offset
    return (slice(dy, dy + out_shape[2]), slice(dx, dx + out_shape[3]))


def _forward(arch: NetworkArch, weights, skip_weight, x, input_cache=None, want_caches=False):
    """Run the network; optionally keep activations/cols for backprop."""
    acts = [x]
    cols_list = []
    h = x
    for li, (w, spec) in enumerate(zip(weights, arch.layers)):
        if li == 0 and input_cache is not None:
            cols, shape = input_cache.main
        else:
            cols, shape = _im2col(h, spec.ky_taps, spec.kx_width, arch.dilation)
        z = _conv_from_cols(cols, shape, w)
        h = np.maximum(z, 0.0) if spec.activation == "relu" else z
        if want_caches:
            cols_list.append(cols)
            acts.append(h)
    out = h
    skip_out_shape = None
    if skip_weight is not None:
        if input_cache is not None:
            s_cols, s_shape = input_cache.skip
        else:
            s_cols, s_shape = _im2col(x, arch.skip.ky_taps, arch.skip.kx_width, arch.dilation)
        skip_full = _conv_from_cols(s_cols, s_shape, skip_weight)
        rows, cols_sl = _skip_crop(arch, out.shape)
        out = out + skip_full[:, :, rows, cols_sl]
        skip_out_shape = skip_full.shape
        if want_caches:
            cols_list.append(s_cols)
    if want_caches:
        return out, acts, cols_list, skip_out_shape
    return out


class _InputCache:
    """Patch matrices of the (constant) input tensor, reused across iterations."""

    def __init__(self, arch: NetworkArch, x: np.ndarray):
        spec = arch.layers[0]
        self.main = _im2col(x, spec.ky_taps, spec.kx_width, arch.dilation)
        self.skip = None
        if arch.skip is not None:
            self.skip = _im2col(x, arch.skip.ky_taps, arch.skip.kx_width, arch.dilation)


def _loss_and_grads(arch, weights, skip_weight, ts: TrainingSet, input_cache=None):
    out, acts, cols_list, skip_shape = _forward(
        arch, weights, skip_weight, ts.sources, input_cache, want_caches=True
    )
    diff = out - ts.targets
    value = float(np.mean(diff * diff))
    if not np.isfinite(value):
        return value, None, None  # caller aborts; gradients would be garbage
    d = (2.0 / diff.size) * diff
    skip_grad = None
    if skip_weight is not None:
        rows, cols_sl = _skip_crop(arch, out.shape)
        d_skip = np.zeros(skip_shape)
        d_skip[:, :, rows, cols_sl] = d
        skip_grad = _conv_grad_w(cols_list[-1], d_skip, skip_weight.shape)
    grads = [None] * len(weights)
    for li in reversed(range(len(weights))):
        if arch.layers[li].activation == "relu":
            d = d * (acts[li + 1] > 0)
        grads[li] = _conv_grad_w(cols_list[li], d, weights[li].shape)
        if li > 0:
            d = _conv_grad_x(weights[li], d, arch.dilation)
    return value, grads, skip_grad


# ---------------------------------------------------------------------------
# public surface

@dataclass
class Gradients:
    """Loss gradients, shaped like the network's weights."""

    layers: list
    skip: np.ndarray | None = None


@dataclass
class MomentumState:
    velocities: list
    skip_velocity: np.ndarray | None = None


@dataclass
class AdamState:
    step: int
    m: list
    v: list
    skip_m: np.ndarray | None = None
    skip_v: np.ndarray | None = None


def init_network(arch: NetworkArch, seed: int) -> ScanNetwork:
    """Glorot-uniform initialization, deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    weights = []
    in_ch = arch.in_channels
    for spec in arch.layers:
        weights.append(_glorot(rng, spec, in_ch))
        in_ch = spec.out_channels
    skip = _glorot(rng, arch.skip, arch.in_channels) if arch.skip is not None else None
    return ScanNetwork(arch=arch, weights=tuple(weights), skip_weight=skip, seed=seed)


def _glorot(rng, spec: LayerSpec, in_ch: int) -> np.ndarray:
    fan_in = in_ch * spec.ky_taps * spec.kx_width
    fan_out = spec.out_channels * spec.ky_taps * spec.kx_width
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(spec.out_channels, in_ch, spec.ky_taps, spec.kx_width))


def forward(net: ScanNetwork, x: np.ndarray) -> np.ndarray:
    """Network output for a [batch, in_ch, ky, kx] input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != net.arch.in_channels:
        raise ValueError(
            f"input must be [batch, {net.arch.in_channels}, ky, kx], got {x.shape}"
        )
    net.arch.output_shape(x.shape[2], x.shape[3])
    return _forward(net.arch, net.weights, net.skip_weight, x)


def forward_main(net: ScanNetwork, x: np.ndarray) -> np.ndarray:
    """Output of the convolutional chain alone (no skip path)."""
    x = np.asarray(x, dtype=np.float64)
    return _forward(net.arch, net.weights, None, x)


def forward_skip(net: ScanNetwork, x: np.ndarray) -> np.ndarray:
    """Output of the linear skip path alone, cropped to the main chain's grid."""
    if net.skip_weight is None:
        raise ValueError("network has no skip path")
    x = np.asarray(x, dtype=np.float64)
    oh, ow = net.arch.output_shape(x.shape[2], x.shape[3])
    full = conv2d_dilated(x, net.skip_weight, net.arch.dilation)
    rows, cols = _skip_crop(net.arch, (x.shape[0], net.arch.out_channels, oh, ow))
    return full[:, :, rows, cols]


def _check_training_set(arch: NetworkArch, ts: TrainingSet) -> None:
    if ts.sources.shape[1] != arch.in_channels:
        raise ValueError(
            f"training sources have {ts.sources.shape[1]} channels, arch expects {arch.in_channels}"
        )
    oh, ow = arch.output_shape(ts.sources.shape[2], ts.sources.shape[3])
    expected = (ts.sources.shape[0], arch.out_channels, oh, ow)
    if ts.targets.shape != expected:
        raise ValueError(f"targets shape {ts.targets.shape} does not match outputs {expected}")


def loss(net: ScanNetwork, ts: TrainingSet) -> float:
    """Mean squared error of the network output against the targets."""
    _check_training_set(net.arch, ts)
    diff = _forward(net.arch, net.weights, net.skip_weight, ts.sources) - ts.targets
    return float(np.mean(diff * diff))


def loss_and_gradients(net: ScanNetwork, ts: TrainingSet):
    """Loss value and its analytic gradients (backpropagation)."""
    _check_training_set(net.arch, ts)
    value, grads, skip_grad = _loss_and_grads(net.arch, net.weights, net.skip_weight, ts)
    return value, Gradients(layers=grads, skip=skip_grad)


def sgd_momentum_step(net: ScanNetwork, grads: Gradients, state, lr: float, momentum: float):
    """One heavy-ball update: v <- momentum*v + lr*g, w <- w - v."""
    if state is None:
        state = MomentumState(
            velocities=[np.zeros_like(w) for w in net.weights],
            skip_velocity=None if net.skip_weight is None else np.zeros_like(net.skip_weight),
        )
    new_w, new_v = [], []
    for w, g, v in zip(net.weights, grads.layers, state.velocities):
        v = momentum * v + lr * g
        new_v.append(v)
        new_w.append(w - v)
    skip_w, skip_v = net.skip_weight, state.skip_velocity
    if skip_w is not None:
        skip_v = momentum * skip_v + lr * grads.skip
        skip_w = skip_w - skip_v
    net = ScanNetwork(arch=net.arch, weights=tuple(new_w), skip_weight=skip_w, seed=net.seed)
    return net, MomentumState(velocities=new_v, skip_velocity=skip_v)


def adam_step(net: ScanNetwork, grads: Gradients, state, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update with bias correction."""
    if state is None:
        state = AdamState(
            step=0,
            m=[np.zeros_like(w) for w in net.weights],
            v=[np.zeros_like(w) for w in net.weights],
            skip_m=None if net.skip_weight is None else np.zeros_like(net.skip_weight),
            skip_v=None if net.skip_weight is None else np.zeros_like(net.skip_weight),
        )
    t = state.step + 1
    c1, c2 = 1.0 - beta1**t, 1.0 - beta2**t

    def update(w, g, m, v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        w = w - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        return w, m, v

    new_w, new_m, new_v = [], [], []
    for w, g, m, v in zip(net.weights, grads.layers, state.m, state.v):
        w, m, v = update(w, g, m, v)
        new_w.append(w)
        new_m.append(m)
        new_v.append(v)
    skip_w, skip_m, skip_v = net.skip_weight, state.skip_m, state.skip_v
    if skip_w is not None:
        skip_w, skip_m, skip_v = update(skip_w, grads.skip, skip_m, skip_v)
    net = ScanNetwork(arch=net.arch, weights=tuple(new_w), skip_weight=skip_w, seed=net.seed)
    return net, AdamState(step=t, m=new_m, v=new_v, skip_m=skip_m, skip_v=skip_v)


def train(net: ScanNetwork, ts: TrainingSet, opt: OptimizerConfig):
    """Run ``opt.iters`` full-batch iterations; returns (trained net, loss history).

    The history records the loss at the start of each iteration.  A
    non-finite loss aborts with :class:`TrainingDivergedError`.
    """
    _check_training_set(net.arch, ts)
    arch = net.arch
    weights = [np.array(w) for w in net.weights]
    skip_w = None if net.skip_weight is None else np.array(net.skip_weight)
    cache = _InputCache(arch, ts.sources)
    losses = np.empty(opt.iters)

    if opt.kind == "sgd_momentum":
        vel = [np.zeros_like(w) for w in weights]
        skip_vel = None if skip_w is None else np.zeros_like(skip_w)
    else:
        m1 = [np.zeros_like(w) for w in weights]
        m2 = [np.zeros_like(w) for w in weights]
        skip_m1 = None if skip_w is None else np.zeros_like(skip_w)
        skip_m2 = None if skip_w is None else np.zeros_like(skip_w)

    # overflow on the way to a non-finite loss is reported as the exception
    # below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, opt.iters + 1):
            value, grads, skip_grad = _loss_and_grads(arch, weights, skip_w, ts, cache)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite training loss at iteration {it}")
            losses[it - 1] = value
            if opt.kind == "sgd_momentum":
                for i, g in enumerate(grads):
                    vel[i] = opt.momentum * vel[i] + opt.lr * g
                    weights[i] -= vel[i]
                if skip_w is not None:
                    skip_vel = opt.momentum * skip_vel + opt.lr * skip_grad
                    skip_w -= skip_vel
            else:
                c1 = 1.0 - opt.beta1**it
                c2 = 1.0 - opt.beta2**it
                for i, g in enumerate(grads):
                    m1[i] = opt.beta1 * m1[i] + (1.0 - opt.beta1) * g
                    m2[i] = opt.beta2 * m2[i] + (1.0 - opt.beta2) * g * g
                    weights[i] -= opt.lr * (m1[i] / c1) / (np.sqrt(m2[i] / c2) + opt.eps)
                if skip_w is not None:
                    skip_m1 = opt.beta1 * skip_m1 + (1.0 - opt.beta1) * skip_grad
                    skip_m2 = opt.beta2 * skip_m2 + (1.0 - opt.beta2) * skip_grad * skip_grad
                    skip_w -= opt.lr * (skip_m1 / c1) / (np.sqrt(skip_m2 / c2) + opt.eps)

    trained = ScanNetwork(arch=arch, weights=tuple(weights), skip_weight=skip_w, seed=net.seed)
    return trained, losses
