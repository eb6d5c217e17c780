"""Differentiable function-approximator substrate for the learning agents.

Everything the agents need is expressed through a small fixed contract:

* ``ParamSet`` — an ordered, named collection of real-valued arrays.
* ``NetworkSpec`` — a declarative, sequential layer description (convolution,
  dense, residual convolution block, 2D max-pool, nearest up-sampling,
  activation, layer normalization) with analytically known output shapes.
* ``forward`` / ``gradients`` — deterministic forward evaluation and
  reverse-mode gradients of a scalar loss.
* ``Adam`` — adaptive-moment optimizer (beta1=0.9, beta2=0.999, eps=1e-8).
* ``soft_update`` — Polyak blend of a target ParamSet toward an online one.

Tensor math is executed by torch on CPU; determinism is guaranteed for a
fixed thread count. Parameter initialization never touches torch's global
RNG: weights are drawn from an explicit numpy generator, fan-in-scaled
uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, normalization
gains one. LeakyReLU uses a fixed negative slope of 0.01. Layer
normalization acts over the channel axis at each spatial position.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

LEAKY_SLOPE = 0.01
LN_EPS = 1e-5


class ShapeError(ValueError):
    """Input shape does not match what a layer or spec expects."""


class ContractError(ValueError):
    """An operation was called outside its contract."""


class TrainingDivergedError(RuntimeError):
    """Non-finite gradients or parameters encountered during an update."""


# ---------------------------------------------------------------------------
# Parameter sets


class ParamSet:
    """Ordered mapping of parameter names to torch tensors."""

    def __init__(self, tensors: Mapping[str, torch.Tensor] | None = None):
        self._tensors: dict[str, torch.Tensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._tensors[name]

    def __setitem__(self, name: str, value: torch.Tensor) -> None:
        self._tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list[torch.Tensor]:
        return list(self._tensors.values())

    def copy(self, requires_grad: bool | None = None) -> "ParamSet":
        """Deep copy, detached from any autograd graph."""
        out = {}
        for name, t in self._tensors.items():
            c = t.detach().clone()
            c.requires_grad_(t.requires_grad if requires_grad is None else requires_grad)
            out[name] = c
        return ParamSet(out)

    def astype(self, dtype: torch.dtype) -> "ParamSet":
        out = {}
        for name, t in self._tensors.items():
            c = t.detach().clone().to(dtype)
            c.requires_grad_(t.requires_grad)
            out[name] = c
        return ParamSet(out)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.detach().numpy().copy() for n, t in self._tensors.items()}

    @classmethod
    def from_arrays(
        cls, arrays: Mapping[str, np.ndarray], requires_grad: bool = True
    ) -> "ParamSet":
        out = {}
        for name, a in arrays.items():
            t = torch.from_numpy(np.ascontiguousarray(a)).clone()
            t.requires_grad_(requires_grad)
            out[name] = t
        return cls(out)

    def assert_finite(self) -> None:
        for name, t in self._tensors.items():
            if not torch.isfinite(t).all():
                raise TrainingDivergedError(f"parameter {name!r} is not finite")

    def update(self, other: "ParamSet") -> None:
        self._tensors.update(other._tensors)


class ParamBuilder:
    """Registers freshly initialized parameters into a ParamSet.

    All draws come from the supplied numpy generator in registration order,
    so a fixed seed yields a bit-identical ParamSet.
    """

    def __init__(self, rng: np.random.Generator | int, dtype: torch.dtype = torch.float32):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        self.rng = rng
        self.dtype = dtype
        self.params = ParamSet()

    def _register(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = torch.from_numpy(np.ascontiguousarray(value)).to(self.dtype)
        t.requires_grad_(True)
        self.params[name] = t

    def _uniform(self, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return self.rng.uniform(-bound, bound, size=shape)

    def conv(
        self, name: str, c_in: int, c_out: int, kernel: int = 3, layer_norm: bool = True
    ) -> None:
        fan_in = c_in * kernel * kernel
        self._register(f"{name}.w", self._uniform((c_out, c_in, kernel, kernel), fan_in))
        self._register(f"{name}.b", np.zeros(c_out))
        if layer_norm:
            self.layer_norm(name, c_out)

    def dense(self, name: str, n_in: int, n_out: int) -> None:
        self._register(f"{name}.w", self._uniform((n_out, n_in), n_in))
        self._register(f"{name}.b", np.zeros(n_out))

    def layer_norm(self, name: str, channels: int) -> None:
        self._register(f"{name}.ln_g", np.ones(channels))
        self._register(f"{name}.ln_b", np.zeros(channels))

    def residual(self, name: str, c_in: int, channels: int, kernel: int = 3, stride: int = 1) -> None:
        self.conv(f"{name}.a", c_in, channels, kernel)
        self.conv(f"{name}.b", channels, channels, kernel)
        if c_in != channels or stride != 1:
            self.conv(f"{name}.proj", c_in, channels, 1, layer_norm=False)


# ---------------------------------------------------------------------------
# Functional layers (torch tensors, NCHW layout)


def to_tensor(x, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.from_numpy(np.ascontiguousarray(x)).to(dtype)


def activation(x: torch.Tensor, kind: str) -> torch.Tensor:
    if kind == "leaky_relu":
        return F.leaky_relu(x, LEAKY_SLOPE)
    if kind == "tanh":
        return torch.tanh(x)
    if kind == "sigmoid":
        return torch.sigmoid(x)
    if kind == "softplus":
        return F.softplus(x)
    if kind == "linear":
        return x
    raise ContractError(f"unknown activation kind {kind!r}")


def channel_layer_norm(
    x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor
) -> torch.Tensor:
    """Normalize over the channel axis independently at each position."""
    y = F.layer_norm(x.permute(0, 2, 3, 1), (x.shape[1],), gain, bias, LN_EPS)
    return y.permute(0, 3, 1, 2)


def conv2d(
    params: ParamSet,
    name: str,
    x: torch.Tensor,
    stride: int = 1,
    layer_norm: bool = True,
    act: str = "leaky_relu",
) -> torch.Tensor:
    w = params[f"{name}.w"]
    if x.ndim != 4:
        raise ShapeError(f"conv2d {name!r} expects NCHW input, got shape {tuple(x.shape)}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv2d {name!r} expects {w.shape[1]} input channels, got {x.shape[1]}"
        )
    k = w.shape[2]
    y = F.conv2d(x, w, params[f"{name}.b"], stride=stride, padding=k // 2)
    if layer_norm:
        y = channel_layer_norm(y, params[f"{name}.ln_g"], params[f"{name}.ln_b"])
    return activation(y, act)


def dense(
    params: ParamSet, name: str, x: torch.Tensor, act: str = "leaky_relu"
) -> torch.Tensor:
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    w = params[f"{name}.w"]
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"dense {name!r} expects {w.shape[1]} features, got {x.shape[1]}"
        )
    return activation(x @ w.t() + params[f"{name}.b"], act)


def residual_block(
    params: ParamSet, name: str, x: torch.Tensor, stride: int = 1
) -> torch.Tensor:
    h = conv2d(params, f"{name}.a", x, stride=stride)
    h = conv2d(params, f"{name}.b", h, stride=1, act="linear")
    if f"{name}.proj.w" in params:
        skip = conv2d(params, f"{name}.proj", x, stride=stride, layer_norm=False, act="linear")
    else:
        skip = x
    return activation(h + skip, "leaky_relu")


def max_pool2d(x: torch.Tensor, window: int) -> torch.Tensor:
    return F.max_pool2d(x, window)


def global_max_pool(x: torch.Tensor) -> torch.Tensor:
    return x.amax(dim=(2, 3))


def upsample_nearest(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    return F.interpolate(x, scale_factor=factor, mode="nearest")


def tile_to_map(vec: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Broadcast a (B, D) vector to a (B, D, H, W) feature map."""
    return vec[:, :, None, None].expand(-1, -1, height, width)


# ---------------------------------------------------------------------------
# Declarative sequential specs


@dataclass(frozen=True)
class Conv:
    channels: int
    kernel: int = 3
    stride: int = 1
    layer_norm: bool = True
    act: str = "leaky_relu"


@dataclass(frozen=True)
class Dense:
    nodes: int
    act: str = "leaky_relu"


@dataclass(frozen=True)
class Residual:
    channels: int
    kernel: int = 3
    stride: int = 1


@dataclass(frozen=True)
class MaxPool:
    window: int = 0  # 0 pools globally


@dataclass(frozen=True)
class Upsample:
    factor: int = 2


@dataclass(frozen=True)
class Act:
    kind: str


Layer = Conv | Dense | Residual | MaxPool | Upsample | Act


def _conv_out(size: int, kernel: int, stride: int) -> int:
    return (size + 2 * (kernel // 2) - kernel) // stride + 1


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer descriptions over a fixed input shape.

    input_shape is (C, H, W) for convolutional specs or (n,) for dense ones.
    Dense layers flatten spatial inputs implicitly.
    """

    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def output_shape(self) -> tuple[int, ...]:
        shape = self.input_shape
        for layer in self.layers:
            shape = _layer_out_shape(layer, shape)
        return shape


def _layer_out_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, Conv):
        c, h, w = shape
        return (layer.channels, _conv_out(h, layer.kernel, layer.stride),
                _conv_out(w, layer.kernel, layer.stride))
    if isinstance(layer, Residual):
        c, h, w = shape
        return (layer.channels, _conv_out(h, layer.kernel, layer.stride),
                _conv_out(w, layer.kernel, layer.stride))
    if isinstance(layer, Dense):
        return (layer.nodes,)
    if isinstance(layer, MaxPool):
        c, h, w = shape
        if layer.window == 0:
            return (c,)
        return (c, h // layer.window, w // layer.window)
    if isinstance(layer, Upsample):
        c, h, w = shape
        return (c, h * layer.factor, w * layer.factor)
    if isinstance(layer, Act):
        return shape
    raise ContractError(f"unknown layer {layer!r}")


def init_params(
    spec: NetworkSpec,
    rng: np.random.Generator | int,
    prefix: str = "net",
    dtype: torch.dtype = torch.float32,
    builder: ParamBuilder | None = None,
) -> ParamSet:
    """Initialize a ParamSet for a sequential spec.

    Parameter names are ``{prefix}.l{i}.*`` in layer order. Passing an
    existing builder lets several specs share one ParamSet and RNG stream.
    """
    b = builder or ParamBuilder(rng, dtype)
    shape = spec.input_shape
    for i, layer in enumerate(spec.layers):
        name = f"{prefix}.l{i}"
        if isinstance(layer, Conv):
            b.conv(name, shape[0], layer.channels, layer.kernel, layer.layer_norm)
        elif isinstance(layer, Residual):
            b.residual(name, shape[0], layer.channels, layer.kernel, layer.stride)
        elif isinstance(layer, Dense):
            n_in = int(np.prod(shape))
            b.dense(name, n_in, layer.nodes)
        shape = _layer_out_shape(layer, shape)
    return b.params


def forward(
    spec: NetworkSpec, params: ParamSet, x, prefix: str = "net"
) -> torch.Tensor:
    """Run a sequential spec. Input is (B, *input_shape); numpy is accepted."""
    x = to_tensor(x, dtype=next(iter(params.items()))[1].dtype if len(params) else torch.float32)
    if tuple(x.shape[1:]) != spec.input_shape:
        raise ShapeError(
            f"input shape {tuple(x.shape[1:])} does not match spec "
            f"{spec.input_shape}"
        )
    for i, layer in enumerate(spec.layers):
        name = f"{prefix}.l{i}"
        if isinstance(layer, Conv):
            x = conv2d(params, name, x, layer.stride, layer.layer_norm, layer.act)
        elif isinstance(layer, Residual):
            x = residual_block(params, name, x, layer.stride)
        elif isinstance(layer, Dense):
            x = dense(params, name, x, layer.act)
        elif isinstance(layer, MaxPool):
            x = global_max_pool(x) if layer.window == 0 else max_pool2d(x, layer.window)
        elif isinstance(layer, Upsample):
            x = upsample_nearest(x, layer.factor)
        elif isinstance(layer, Act):
            x = activation(x, layer.kind)
    return x


# ---------------------------------------------------------------------------
# Gradients and optimization


def loss_and_gradients(
    loss_fn: Callable[[ParamSet], torch.Tensor], params: ParamSet
) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss value plus reverse-mode gradients for every parameter."""
    loss = loss_fn(params)
    if not isinstance(loss, torch.Tensor) or loss.dim() != 0:
        raise ContractError("loss_fn must return a scalar tensor")
    names = params.names()
    tensors = [params[n] for n in names]
    if not loss.requires_grad:  # constant loss: all gradients vanish
        return float(loss), {n: torch.zeros_like(t) for n, t in zip(names, tensors)}
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return float(loss.detach()), {
        n: (g if g is not None else torch.zeros_like(t))
        for n, t, g in zip(names, tensors, grads)
    }


def gradients(
    loss_fn: Callable[[ParamSet], torch.Tensor], params: ParamSet
) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss for every parameter."""
    return loss_and_gradients(loss_fn, params)[1]


class Adam:
    """Adaptive-moment estimation with bias correction.

    Constants are fixed: beta1=0.9, beta2=0.999, eps=1e-8. Updates are
    applied in place; the step is deterministic given the optimizer state.
    Non-finite gradients raise TrainingDivergedError rather than being
    clamped.
    """

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: ParamSet, lr: float):
        self.params = params
        self.lr = lr
        self.t = 0
        self.m = {n: torch.zeros_like(t) for n, t in params.items()}
        self.v = {n: torch.zeros_like(t) for n, t in params.items()}

    def step(self, grads: Mapping[str, torch.Tensor]) -> ParamSet:
        for name, g in grads.items():
            if not torch.isfinite(g).all():
                raise TrainingDivergedError(f"non-finite gradient for {name!r}")
        self.t += 1
        b1c = 1.0 - self.BETA1 ** self.t
        b2c = 1.0 - self.BETA2 ** self.t
        with torch.no_grad():
            for name, g in grads.items():
                g = g.detach()
                m = self.m[name]
                v = self.v[name]
                m.mul_(self.BETA1).add_(g, alpha=1.0 - self.BETA1)
                v.mul_(self.BETA2).addcmul_(g, g, value=1.0 - self.BETA2)
                update = (m / b1c) / ((v / b2c).sqrt() + self.EPS)
                self.params[name].sub_(update, alpha=self.lr)
        return self.params


def soft_update(target: ParamSet, online: ParamSet, tau: float) -> ParamSet:
    """Blend target toward online in place: tau*online + (1-tau)*target."""
    if not 0.0 < tau <= 1.0:
        raise ContractError(f"tau must be in (0, 1], got {tau}")
    if set(target.names()) != set(online.names()):
        raise ShapeError("target and online ParamSets name different parameters")
    with torch.no_grad():
        for name, t in target.items():
            o = online[name]
            if o.shape != t.shape:
                raise ShapeError(f"shape mismatch for {name!r}")
            t.mul_(1.0 - tau).add_(o.detach(), alpha=tau)
    return target
