"""Differentiable building blocks shared by all five architectures.

Shapes follow one sequence at a time: temporal feature maps are ``(T, C)``
and graph feature maps ``(T, N, C)``; channels are always the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import tensor as tn
from .graph import ConfigurationError, PartitionedAdjacency
from .tensor import BatchNormState, DimensionError, Parameter, Tensor

MASK_MODES = ("elementwise", "right")


@dataclass(frozen=True)
class ConvSpec:
    kernel: int = 3
    dilation: int = 1
    causal: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.dilation < 1:
            raise ConfigurationError(f"kernel and dilation must be >= 1, got k={self.kernel}, d={self.dilation}")
        if not self.causal and self.kernel % 2 == 0:
            raise ConfigurationError(f"acausal convolution needs an odd kernel, got k={self.kernel}")

    def offsets(self) -> list[int]:
        """Time offset read by each kernel tap, relative to the output sample."""
        k, d = self.kernel, self.dilation
        if self.causal:
            return [-d * i for i in range(k)]
        half = (k - 1) // 2
        return [d * (i - half) for i in range(k)]

    @property
    def reach(self) -> int:
        return self.dilation * (self.kernel - 1)


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal container: parameters, batch-norm buffers and a train/eval flag."""

    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module, BatchNormState)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, BatchNormState]]:
        for key, value in self._children():
            if isinstance(value, BatchNormState):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


# ---------------------------------------------------------------------------
# functional forms


def dilated_temporal_conv(f_in: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Dilated convolution along axis 0 with zero padding; output length equals input length.

    ``weight`` has shape (k, C_in, C_out).  Any middle axes (nodes) share the
    kernel.
    """
    k, c_in, c_out = weight.shape
    if k != spec.kernel:
        raise DimensionError(f"kernel of size {k} does not match spec kernel {spec.kernel}")
    if f_in.shape[-1] != c_in:
        raise DimensionError(f"input has {f_in.shape[-1]} channels, kernel expects {c_in}")
    taps = tn.temporal_taps(f_in, spec.offsets())
    return tn.bias_add(tn.matmul(taps, tn.reshape(weight, (k * c_in, c_out))), bias)


def conv_1x1(f_in: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if f_in.shape[-1] != weight.shape[0]:
        raise DimensionError(f"conv_1x1: input channels {f_in.shape[-1]} vs weight {weight.shape}")
    return tn.bias_add(tn.matmul(f_in, weight), bias)


def graph_conv(f_adj: Tensor, adjacency: PartitionedAdjacency, weights: Sequence[Tensor],
               masks: Sequence[Tensor], mask_mode: str = "elementwise") -> Tensor:
    """Sum over partitions of masked neighbourhood propagation then a channel map.

    ``elementwise`` gates each normalised adjacency entry by the mask before
    propagating.  ``right`` applies the mask as a separate node-mixing factor
    after the channel map: ``out[t, w] = sum_v y[t, v] M[v, w]``.
    """
    n = adjacency.num_nodes
    if f_adj.ndim != 3 or f_adj.shape[1] != n:
        raise DimensionError(f"graph_conv: features {f_adj.shape} do not match a {n}-node graph")
    out = None
    for a_p, w_p, m_p in zip(adjacency.matrices, weights, masks):
        a_p = Tensor(a_p)
        if mask_mode == "elementwise":
            term = tn.matmul(tn.node_mix(tn.mul(a_p, m_p), f_adj), w_p)
        elif mask_mode == "right":
            term = tn.node_mix(tn.transpose(m_p, (1, 0)), tn.matmul(tn.node_mix(a_p, f_adj), w_p))
        else:
            raise ConfigurationError(f"unknown mask mode {mask_mode!r}; expected one of {MASK_MODES}")
        out = term if out is None else tn.add(out, term)
    return out


def spatial_pool(f_out: Tensor) -> Tensor:
    """Mean over the node axis: (T, N, C) -> (T, C)."""
    return tn.tensor_mean(f_out, axis=1)


# ---------------------------------------------------------------------------
# modules


class BatchNorm(Module):
    def __init__(self, channels: int, name: str = "bn", axes: tuple[int, ...] | None = None):
        self.gamma = Parameter(np.ones(channels), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels), name=f"{name}.beta")
        self.state = BatchNormState(channels)
        self.axes = axes

    def forward(self, x: Tensor) -> Tensor:
        return tn.batch_norm(x, self.gamma, self.beta, self.state, training=self.training, axes=self.axes)


class Conv1x1(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.weight = Parameter(uniform_init(rng, (c_in, c_out), c_in), name="weight")
        self.bias = Parameter(np.zeros(c_out), name="bias")

    def forward(self, x: Tensor) -> Tensor:
        return conv_1x1(x, self.weight, self.bias)


class TemporalConv(Module):
    def __init__(self, c_in: int, c_out: int, spec: ConvSpec, rng: np.random.Generator):
        self.spec = spec
        self.weight = Parameter(uniform_init(rng, (spec.kernel, c_in, c_out), spec.kernel * c_in), name="weight")
        self.bias = Parameter(np.zeros(c_out), name="bias")

    def forward(self, x: Tensor) -> Tensor:
        return dilated_temporal_conv(x, self.weight, self.bias, self.spec)


class GraphConv(Module):
    def __init__(self, c_in: int, c_out: int, adjacency: PartitionedAdjacency, rng: np.random.Generator,
                 mask_mode: str = "elementwise"):
        if mask_mode not in MASK_MODES:
            raise ConfigurationError(f"unknown mask mode {mask_mode!r}; expected one of {MASK_MODES}")
        n = adjacency.num_nodes
        self.adjacency = adjacency
        self.mask_mode = mask_mode
        self.weights = [Parameter(uniform_init(rng, (c_in, c_out), c_in), name=f"weight_{p}") for p in range(3)]
        # an all-ones right factor would average every node into every other
        init = np.ones((n, n)) if mask_mode == "elementwise" else np.eye(n)
        self.masks = [Parameter(init.copy(), name=f"mask_{p}") for p in range(3)]

    def forward(self, x: Tensor) -> Tensor:
        return graph_conv(x, self.adjacency, self.weights, self.masks, self.mask_mode)


class TCNBlock(Module):
    """Dilated conv, batch norm, ReLU, plus the block input."""

    def __init__(self, channels: int, spec: ConvSpec, rng: np.random.Generator):
        self.conv = TemporalConv(channels, channels, spec, rng)
        self.bn = BatchNorm(channels)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.conv.weight.shape[1]:
            raise ConfigurationError(f"residual block expects {self.conv.weight.shape[1]} channels, got {x.shape[-1]}")
        return tn.add(tn.relu(self.bn(self.conv(x))), x)


class STGCNBlock(Module):
    """Graph conv, BN, ReLU, per-node dilated temporal conv, BN, ReLU, plus the block input."""

    def __init__(self, channels: int, adjacency: PartitionedAdjacency, spec: ConvSpec,
                 rng: np.random.Generator, mask_mode: str = "elementwise"):
        self.gcn = GraphConv(channels, channels, adjacency, rng, mask_mode)
        self.bn_gcn = BatchNorm(channels)
        self.tconv = TemporalConv(channels, channels, spec, rng)
        self.bn_tconv = BatchNorm(channels)

    def forward(self, x: Tensor) -> Tensor:
        h = tn.relu(self.bn_gcn(self.gcn(x)))
        h = tn.relu(self.bn_tconv(self.tconv(h)))
        return tn.add(h, x)


class PredictionHead(Module):
    """1x1 map to class logits followed by a per-sample softmax."""

    def __init__(self, c_in: int, num_classes: int, rng: np.random.Generator):
        self.conv = Conv1x1(c_in, num_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        return tn.softmax_over_classes(self.conv(x))


def prediction_head(f_out: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return tn.softmax_over_classes(conv_1x1(f_out, weight, bias))


# ---------------------------------------------------------------------------
# recurrent


class LSTMWeights(Module):
    """Input and recurrent weights for the four gates, ordered (input, forget, candidate, output)."""

    def __init__(self, c_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_in = Parameter(uniform_init(rng, (c_in, 4 * hidden), c_in), name="w_in")
        self.b_in = Parameter(np.zeros(4 * hidden), name="b_in")
        self.w_hid = Parameter(uniform_init(rng, (hidden, 4 * hidden), hidden), name="w_hid")
        self.b_hid = Parameter(np.zeros(4 * hidden), name="b_hid")


def _lstm_cell(z_in: Tensor, h_prev: Tensor, c_prev: Tensor, w: LSTMWeights) -> tuple[Tensor, Tensor]:
    H = w.hidden
    z = tn.add(z_in, tn.bias_add(tn.matmul(h_prev, w.w_hid), w.b_hid))
    i = tn.sigmoid(z[:, 0:H])
    j = tn.sigmoid(z[:, H:2 * H])
    c_tilde = tn.tanh(z[:, 2 * H:3 * H])
    o = tn.sigmoid(z[:, 3 * H:4 * H])
    c = tn.add(tn.mul(j, c_prev), tn.mul(i, c_tilde))
    h = tn.mul(tn.tanh(c), o)
    return h, c


def lstm_step(f_in_t: Tensor, h_prev: Tensor, c_prev: Tensor, w: LSTMWeights) -> tuple[Tensor, Tensor]:
    """One recurrence step on row vectors of shape (1, C_in) / (1, H)."""
    z_in = tn.bias_add(tn.matmul(f_in_t, w.w_in), w.b_in)
    return _lstm_cell(z_in, h_prev, c_prev, w)


def lstm_sequence(f_in: Tensor, w: LSTMWeights, reverse: bool = False) -> Tensor:
    """Run one direction over a (T, C_in) sequence from zero states; returns (T, H) aligned in time."""
    T = f_in.shape[0]
    z_all = tn.bias_add(tn.matmul(f_in, w.w_in), w.b_in)
    h = Tensor(np.zeros((1, w.hidden)))
    c = Tensor(np.zeros((1, w.hidden)))
    outputs: list[Tensor | None] = [None] * T
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        h, c = _lstm_cell(z_all[t:t + 1], h, c, w)
        outputs[t] = h
    return tn.concat(outputs, axis=0)


def bilstm_layer(f_in: Tensor, w_fwd: LSTMWeights, w_bwd: LSTMWeights) -> Tensor:
    """Forward and time-reversed passes concatenated per sample: (T, 2H)."""
    return tn.concat([lstm_sequence(f_in, w_fwd), lstm_sequence(f_in, w_bwd, reverse=True)], axis=-1)


class RecurrentStack(Module):
    """Stacked (bi)directional LSTM; layer l+1 reads the concatenated output of layer l."""

    def __init__(self, c_in: int, hidden: int, num_layers: int, bidirectional: bool, rng: np.random.Generator):
        self.bidirectional = bidirectional
        width = 2 * hidden if bidirectional else hidden
        self.forward_layers = []
        self.backward_layers = []
        for layer in range(num_layers):
            size = c_in if layer == 0 else width
            self.forward_layers.append(LSTMWeights(size, hidden, rng))
            if bidirectional:
                self.backward_layers.append(LSTMWeights(size, hidden, rng))
        self.out_channels = width

    def forward(self, x: Tensor) -> Tensor:
        for layer, w_fwd in enumerate(self.forward_layers):
            if self.bidirectional:
                x = bilstm_layer(x, w_fwd, self.backward_layers[layer])
            else:
                x = lstm_sequence(x, w_fwd)
        return x
