"""1D-CNN-LSTM Q-network with hand-written forward and backward passes.

Layer stack (tensors are ``[N, T, C]`` internally)::

    BatchNorm -> Conv1D(same) -> PReLU -> Conv1D(same) -> PReLU
    -> MaxPool -> AvgPool -> SpatialDropout -> LSTM (full sequence)
    -> GlobalMaxPool -> Dense(ReLU) x k -> Dense (linear | softmax)

The LSTM keeps one kernel acting on the concatenation ``[h_{t-1}, x_t]`` with
gate blocks ordered forget, input, candidate, output.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidParameterError, NumericError, StateError

__all__ = [
    "QNetworkSpec",
    "QNetworkParams",
    "ForwardCache",
    "init_params",
    "forward",
    "backward",
    "regularization_loss",
    "regularized_kernels",
    "adam_step",
    "learning_rate",
    "reshape_features",
    "flatten_features",
]


@dataclass(frozen=True)
class QNetworkSpec:
    channels_in: int
    time_in: int
    n_actions: int
    conv1_filters: int = 64
    conv1_kernel: int = 7
    conv2_filters: int = 128
    conv2_kernel: int = 5
    max_pool: int = 2
    avg_pool: int = 2
    dropout: float = 0.1
    lstm_units: int = 128
    dense_units: tuple = (128, 64)
    l1: float = 0.01
    l2: float = 0.01
    dense_l1: float = 0.0
    dense_l2: float = 0.0
    head: str = "linear"
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3
    prelu_init: float = 0.25
    forget_bias: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dense_units", tuple(int(u) for u in self.dense_units))
        if min(self.channels_in, self.time_in, self.n_actions) < 1:
            raise InvalidParameterError("input channels, time steps and actions must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidParameterError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.head not in ("linear", "softmax"):
            raise InvalidParameterError(f"unknown head {self.head!r}")
        if max(self.conv1_kernel, self.conv2_kernel) > self.time_in:
            raise InvalidParameterError("conv kernel longer than the input sequence")
        if self.lstm_steps < 1:
            raise InvalidParameterError(
                f"time_in={self.time_in} leaves no steps after pooling "
                f"({self.max_pool} x {self.avg_pool})"
            )

    @property
    def lstm_steps(self):
        return self.time_in // self.max_pool // self.avg_pool

    @classmethod
    def tiny(cls, n_actions=3, **overrides):
        """Small network used for gradient checks."""
        kw = dict(channels_in=2, time_in=16, n_actions=n_actions, conv1_filters=8,
                  conv1_kernel=7, conv2_filters=4, conv2_kernel=5, lstm_units=4,
                  dense_units=(6, 5), dense_l1=0.01, dense_l2=0.01)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["dense_units"] = list(self.dense_units)
        return d


@dataclass
class QNetworkParams:
    """Trainable weights, batch-norm running statistics and Adam state."""

    weights: dict
    running_mean: np.ndarray
    running_var: np.ndarray
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0

    def copy(self):
        return copy.deepcopy(self)

    def load_weights_from(self, other):
        """Hard-sync weights and running statistics (not optimizer state)."""
        self.weights = {k: v.copy() for k, v in other.weights.items()}
        self.running_mean = other.running_mean.copy()
        self.running_var = other.running_var.copy()

    def n_parameters(self):
        return sum(v.size for v in self.weights.values())


@dataclass
class ForwardCache:
    mode: str
    layers: dict = field(default_factory=dict)
    batch_mean: np.ndarray | None = None
    batch_var: np.ndarray | None = None


def _dense_names(spec):
    return [f"dense{i}" for i in range(len(spec.dense_units))] + ["out"]


def regularized_kernels(spec):
    """``(name, l1, l2)`` for every penalized kernel."""
    out = [("lstm_W", spec.l1, spec.l2)]
    return out + [(f"{n}_W", spec.dense_l1, spec.dense_l2) for n in _dense_names(spec)]


def init_params(spec, rng):
    """He-uniform conv/dense kernels, Glorot-uniform LSTM kernel, zero biases."""
    def he(shape, fan_in):
        lim = np.sqrt(6.0 / fan_in)
        return rng.uniform(shape, -lim, lim)

    w = {}
    c = spec.channels_in
    w["bn_gamma"] = np.ones(c)
    w["bn_beta"] = np.zeros(c)
    cin = c
    for name, filters, k in (("conv1", spec.conv1_filters, spec.conv1_kernel),
                             ("conv2", spec.conv2_filters, spec.conv2_kernel)):
        w[f"{name}_W"] = he((k, cin, filters), k * cin)
        w[f"{name}_b"] = np.zeros(filters)
        w[f"{name}_alpha"] = np.full(filters, spec.prelu_init)
        cin = filters
    H = spec.lstm_units
    lim = np.sqrt(6.0 / ((H + cin) + 4 * H))
    w["lstm_W"] = rng.uniform((H + cin, 4 * H), -lim, lim)
    b = np.zeros(4 * H)
    b[:H] = spec.forget_bias
    w["lstm_b"] = b
    fan = H
    for name, units in zip(_dense_names(spec), list(spec.dense_units) + [spec.n_actions]):
        w[f"{name}_W"] = he((fan, units), fan)
        w[f"{name}_b"] = np.zeros(units)
        fan = units
    return QNetworkParams(w, np.zeros(c), np.ones(c))


def _sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check(x, layer):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite activation in layer {layer!r}")
    return x


def _conv_same(x, W, b):
    k = W.shape[0]
    left = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (left, k - 1 - left), (0, 0)))
    patches = sliding_window_view(xp, k, axis=1)  # N, T, C, k
    patches = np.ascontiguousarray(patches.transpose(0, 1, 3, 2))  # N, T, k, C
    n, t = x.shape[:2]
    y = patches.reshape(n * t, -1) @ W.reshape(-1, W.shape[2])
    return y.reshape(n, t, -1) + b, patches


def _conv_same_backward(g, patches, W, x_shape):
    n, t, cin = x_shape
    k = W.shape[0]
    left = (k - 1) // 2
    g2 = g.reshape(n * t, -1)
    dW = (patches.reshape(n * t, -1).T @ g2).reshape(W.shape)
    db = g2.sum(axis=0)
    dpatch = (g2 @ W.reshape(-1, W.shape[2]).T).reshape(n, t, k, cin)
    dxp = np.zeros((n, t + k - 1, cin))
    for j in range(k):
        dxp[:, j:j + t] += dpatch[:, :, j]
    return dxp[:, left:left + t], dW, db


def _prelu(x, alpha):
    return np.maximum(x, 0.0) + alpha * np.minimum(x, 0.0)


def _prelu_backward(g, x, alpha):
    neg = x < 0
    dx = np.where(neg, alpha * g, g)
    dalpha = np.sum(g * np.minimum(x, 0.0), axis=(0, 1))
    return dx, dalpha


def _pool_view(x, p):
    n, t, c = x.shape
    t2 = t // p
    return x[:, :t2 * p].reshape(n, t2, p, c)


def reshape_features(t):
    """``N x channels_in x time_in`` view of a feature tensor.

    Flat vectors become one-channel sequences; grids keep components as
    channels and features as the time axis.
    """
    data = np.asarray(t) if isinstance(t, (np.ndarray, list)) else t.data
    layout = getattr(t, "layout", "flat_1d" if data.ndim == 2 else "grid_2d")
    if layout == "flat_1d":
        return data.reshape(len(data), 1, -1)
    return data.reshape(len(data), data.shape[1], data.shape[2])


def flatten_features(x, layout):
    x = np.asarray(x)
    return x.reshape(len(x), -1) if layout == "flat_1d" else x


def forward(params, spec, batch, mode="inference", rng=None, update_stats=True):
    """Run the network on ``batch`` of shape ``N x channels_in x time_in``.

    ``mode="train"`` normalizes with batch statistics, updates the running
    statistics (unless ``update_stats`` is false), applies spatial dropout and
    returns a :class:`ForwardCache` for :func:`backward`. Inference mode uses
    running statistics, skips dropout and returns ``cache=None``.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (spec.channels_in, spec.time_in):
        raise InvalidParameterError(
            f"batch shape {x.shape} does not match (N, {spec.channels_in}, {spec.time_in})"
        )
    if mode not in ("train", "inference"):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    train = mode == "train"
    w = params.weights
    L = {}
    x = x.transpose(0, 2, 1)  # N, T, C

    if train:
        mu = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
    else:
        mu, var = params.running_mean, params.running_var
    inv = 1.0 / np.sqrt(var + spec.bn_eps)
    xhat = (x - mu) * inv
    h = _check(w["bn_gamma"] * xhat + w["bn_beta"], "batch_norm")
    cache = ForwardCache(mode)
    if train:
        L["bn"] = (xhat, inv)
        cache.batch_mean, cache.batch_var = mu, var
        if update_stats:
            mom = spec.bn_momentum
            params.running_mean = mom * params.running_mean + (1 - mom) * mu
            params.running_var = mom * params.running_var + (1 - mom) * var

    for name in ("conv1", "conv2"):
        pre, patches = _conv_same(h, w[f"{name}_W"], w[f"{name}_b"])
        L[name] = (patches, h.shape)
        L[f"{name}_act"] = pre
        h = _check(_prelu(pre, w[f"{name}_alpha"]), name)

    view = _pool_view(h, spec.max_pool)
    idx = np.argmax(view, axis=2)
    L["maxpool"] = (idx, h.shape)
    h = np.take_along_axis(view, idx[:, :, None, :], axis=2)[:, :, 0, :]

    L["avgpool"] = h.shape
    h = _pool_view(h, spec.avg_pool).mean(axis=2)

    if train and spec.dropout > 0:
        if rng is None:
            raise InvalidParameterError("train-mode forward with dropout needs an rng")
        keep = rng.uniform((h.shape[0], 1, h.shape[2])) >= spec.dropout
        mask = keep / (1.0 - spec.dropout)
        L["dropout"] = mask
        h = h * mask

    n, T, D = h.shape
    H = spec.lstm_units
    W, b = w["lstm_W"], w["lstm_b"]
    hs = np.zeros((n, T, H))
    hp, cp = np.zeros((n, H)), np.zeros((n, H))
    steps = []
    for t in range(T):
        z = np.concatenate([hp, h[:, t]], axis=1)
        a = z @ W + b
        f = _sigmoid(a[:, :H])
        i = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c = f * cp + i * g
        tc = np.tanh(c)
        hn = o * tc
        steps.append((z, f, i, g, o, c, tc, cp))
        hs[:, t] = hn
        hp, cp = hn, c
    L["lstm"] = steps
    h = _check(hs, "lstm")

    gidx = np.argmax(h, axis=1)
    L["gmp"] = (gidx, h.shape)
    h = np.take_along_axis(h, gidx[:, None, :], axis=1)[:, 0, :]

    for name in _dense_names(spec):
        L[f"{name}_in"] = h
        pre = h @ w[f"{name}_W"] + w[f"{name}_b"]
        if name == "out":
            h = pre
        else:
            L[f"{name}_pre"] = pre
            h = np.maximum(pre, 0.0)
        _check(h, name)

    if spec.head == "softmax":
        e = np.exp(h - h.max(axis=1, keepdims=True))
        h = e / e.sum(axis=1, keepdims=True)
        L["softmax"] = h
    cache.layers = L
    return h, (cache if train else None)


def backward(params, spec, cache, output_grad):
    """Gradients of ``sum(output * output_grad) + regularization_loss`` for every weight."""
    if cache is None or cache.mode != "train" or not cache.layers:
        raise StateError("backward needs the cache of a train-mode forward")
    w = params.weights
    L = cache.layers
    grads = {}
    g = np.asarray(output_grad, dtype=np.float64)

    if spec.head == "softmax":
        y = L["softmax"]
        g = y * (g - np.sum(g * y, axis=1, keepdims=True))

    for name in reversed(_dense_names(spec)):
        if name != "out":
            g = g * (L[f"{name}_pre"] > 0)
        hin = L[f"{name}_in"]
        grads[f"{name}_W"] = hin.T @ g
        grads[f"{name}_b"] = g.sum(axis=0)
        g = g @ w[f"{name}_W"].T

    gidx, shape = L["gmp"]
    dhs = np.zeros(shape)
    np.put_along_axis(dhs, gidx[:, None, :], g[:, None, :], axis=1)

    H = spec.lstm_units
    W = w["lstm_W"]
    dW = np.zeros_like(W)
    db = np.zeros(4 * H)
    n, T, _ = shape
    D = W.shape[0] - H
    dx = np.zeros((n, T, D))
    dh_next = np.zeros((n, H))
    dc_next = np.zeros((n, H))
    for t in reversed(range(T)):
        z, f, i, gg, o, c, tc, cp = L["lstm"][t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * cp * f * (1.0 - f),
            dc * gg * i * (1.0 - i),
            dc * i * (1.0 - gg * gg),
            do * o * (1.0 - o),
        ], axis=1)
        dW += z.T @ da
        db += da.sum(axis=0)
        dz = da @ W.T
        dh_next = dz[:, :H]
        dx[:, t] = dz[:, H:]
        dc_next = dc * f
    grads["lstm_W"] = dW
    grads["lstm_b"] = db
    g = dx

    if "dropout" in L:
        g = g * L["dropout"]

    shape = L["avgpool"]
    p = spec.avg_pool
    up = np.zeros(shape)
    t2 = g.shape[1]
    up[:, :t2 * p] = np.repeat(g / p, p, axis=1)
    g = up

    idx, shape = L["maxpool"]
    p = spec.max_pool
    n, t, c = shape
    t2 = t // p
    dview = np.zeros((n, t2, p, c))
    np.put_along_axis(dview, idx[:, :, None, :], g[:, :, None, :], axis=2)
    up = np.zeros(shape)
    up[:, :t2 * p] = dview.reshape(n, t2 * p, c)
    g = up

    for name in ("conv2", "conv1"):
        g, grads[f"{name}_alpha"] = _prelu_backward(g, L[f"{name}_act"], w[f"{name}_alpha"])
        patches, x_shape = L[name]
        g, grads[f"{name}_W"], grads[f"{name}_b"] = _conv_same_backward(
            g, patches, w[f"{name}_W"], x_shape)

    xhat, inv = L["bn"]
    grads["bn_gamma"] = np.sum(g * xhat, axis=(0, 1))
    grads["bn_beta"] = np.sum(g, axis=(0, 1))
    # input gradient is not needed; BN parameters are the first trainables

    for name, l1, l2 in regularized_kernels(spec):
        Wk = w[name]
        grads[name] = grads[name] + l1 * np.sign(Wk) + 2.0 * l2 * Wk
    return grads


def regularization_loss(params, spec):
    """``l1 * sum|W| + l2 * sum W**2`` over the LSTM and dense kernels."""
    total = 0.0
    for name, l1, l2 in regularized_kernels(spec):
        Wk = params.weights[name]
        total += l1 * np.sum(np.abs(Wk)) + l2 * np.sum(Wk * Wk)
    return float(total)


def learning_rate(lr0, decay, step):
    """Time-based decay ``lr0 / (1 + decay * step)``."""
    return lr0 / (1.0 + decay * step)


def adam_step(params, grads, lr0, decay=0.0, beta1=0.9, beta2=0.999, eps=1e-7, clip_norm=1.0):
    """One Adam update in place; returns the learning rate used.

    Gradients are first rescaled to a global L2 norm of at most ``clip_norm``.
    Non-finite gradients refuse the step and leave ``params`` untouched.
    """
    for k, g in grads.items():
        if k not in params.weights:
            raise InvalidParameterError(f"gradient for unknown parameter {k!r}")
        if g.shape != params.weights[k].shape:
            raise InvalidParameterError(f"gradient shape mismatch for {k!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k!r}; step refused")
    if clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > clip_norm:
            grads = {k: g * (clip_norm / norm) for k, g in grads.items()}
    lr = learning_rate(lr0, decay, params.step)
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m = params.adam_m.get(k)
        v = params.adam_v.get(k)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        params.adam_m[k], params.adam_v[k] = m, v
        params.weights[k] = params.weights[k] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return lr
