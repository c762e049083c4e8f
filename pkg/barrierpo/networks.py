"""Multilayer perceptrons with in-house backpropagation.

Every network exposes its trainable parameters as one flat float64 vector
(``FlatParams``) in a canonical order: layer by layer from input to output,
each layer's weight matrix of shape ``(out, in)`` flattened row-major
followed by its bias vector. A :class:`GaussianPolicy` appends its
``log_std`` vector after the mean network's parameters. Gradients use the
same order.
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np
from numpy.typing import NDArray

from barrierpo.exceptions import CheckpointError, NumericFailureError

FloatArray = NDArray[np.float64]

CHECKPOINT_MAGIC = b"BPON"
CHECKPOINT_VERSION = 1


class Activation(str, Enum):
    LEAKY_RELU = "leaky-relu"
    TANH = "tanh"


_ACTIVATION_CODES = {Activation.LEAKY_RELU: 0, Activation.TANH: 1}


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to output plus the hidden activation."""

    layer_widths: tuple[int, ...]
    activation: Activation = Activation.LEAKY_RELU
    leaky_slope: float = 0.01

    def __post_init__(self) -> None:
        widths = tuple(self.layer_widths)
        if len(widths) < 3:
            raise ValueError("MlpSpec needs an input width, at least one hidden width, and an output width.")
        for width in widths:
            if isinstance(width, bool) or not isinstance(width, int | np.integer) or width < 1:
                raise ValueError("MlpSpec layer widths must be positive integers.")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must be in [0, 1).")
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in widths))
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = self.layer_widths
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    @property
    def num_params(self) -> int:
        return sum(out * inp + out for out, inp in self.layer_shapes)


def flatten(arrays: Sequence[FloatArray]) -> FloatArray:
    if not arrays:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


def unflatten(flat: FloatArray, shapes: Sequence[tuple[int, ...]]) -> list[FloatArray]:
    total = sum(int(np.prod(shape)) for shape in shapes)
    if flat.shape != (total,):
        raise ValueError(f"Expected a flat vector of length {total}, got shape {flat.shape}.")
    arrays: list[FloatArray] = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[offset : offset + size].reshape(shape).copy())
        offset += size
    return arrays


def _orthogonal(rows: int, cols: int, gain: float, rng: np.random.Generator) -> FloatArray:
    sample = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(sample)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.asarray(gain * q[:rows, :cols], dtype=np.float64)


@dataclass(frozen=True)
class _ForwardCache:
    inputs: list[FloatArray]
    preactivations: list[FloatArray]


class Mlp:
    """Fully connected network with a linear output layer."""

    def __init__(self, spec: MlpSpec, weights: Sequence[FloatArray], biases: Sequence[FloatArray]) -> None:
        shapes = spec.layer_shapes
        if len(weights) != len(shapes) or len(biases) != len(shapes):
            raise ValueError("Weight and bias counts must match the MlpSpec layer count.")
        for (out, inp), w, b in zip(shapes, weights, biases, strict=True):
            if w.shape != (out, inp) or b.shape != (out,):
                raise ValueError("Weight or bias shape does not match the MlpSpec.")
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def initialize(
        cls,
        spec: MlpSpec,
        rng: np.random.Generator,
        *,
        hidden_gain: float = float(np.sqrt(2.0)),
        output_gain: float = 1.0,
    ) -> Mlp:
        shapes = spec.layer_shapes
        weights = [
            _orthogonal(out, inp, output_gain if i == len(shapes) - 1 else hidden_gain, rng)
            for i, (out, inp) in enumerate(shapes)
        ]
        biases = [np.zeros(out, dtype=np.float64) for out, _ in shapes]
        return cls(spec, weights, biases)

    @classmethod
    def from_flat(cls, spec: MlpSpec, flat: FloatArray) -> Mlp:
        shapes: list[tuple[int, ...]] = []
        for out, inp in spec.layer_shapes:
            shapes.extend([(out, inp), (out,)])
        arrays = unflatten(np.asarray(flat, dtype=np.float64), shapes)
        return cls(spec, arrays[0::2], arrays[1::2])

    @property
    def num_params(self) -> int:
        return self.spec.num_params

    def flat(self) -> FloatArray:
        arrays: list[FloatArray] = []
        for w, b in zip(self.weights, self.biases, strict=True):
            arrays.extend([w, b])
        return flatten(arrays)

    def _activate(self, z: FloatArray) -> FloatArray:
        if self.spec.activation is Activation.TANH:
            return np.tanh(z)
        return np.where(z > 0.0, z, self.spec.leaky_slope * z)

    def _activation_slope(self, z: FloatArray) -> FloatArray:
        if self.spec.activation is Activation.TANH:
            return 1.0 - np.tanh(z) ** 2
        return np.where(z > 0.0, 1.0, self.spec.leaky_slope)

    def forward(self, x: FloatArray) -> tuple[FloatArray, _ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_width:
            raise ValueError(
                f"Expected inputs of shape (batch, {self.spec.input_width}), got {x.shape}."
            )
        inputs: list[FloatArray] = []
        preactivations: list[FloatArray] = []
        h = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases, strict=True)):
            inputs.append(h)
            z = h @ w.T + b
            if not np.all(np.isfinite(z)):
                raise NumericFailureError(layer)
            preactivations.append(z)
            h = z if layer == last else self._activate(z)
        return h, _ForwardCache(inputs, preactivations)

    def __call__(self, x: FloatArray) -> FloatArray:
        return self.forward(x)[0]

    def backward(self, cache: _ForwardCache, grad_output: FloatArray) -> FloatArray:
        """Vector-Jacobian product: gradient of ``sum(grad_output * out)`` w.r.t. params."""
        g = np.asarray(grad_output, dtype=np.float64)
        grads: list[FloatArray] = []
        last = len(self.weights) - 1
        for layer in range(last, -1, -1):
            if layer != last:
                g = g * self._activation_slope(cache.preactivations[layer])
            grads.append(g.sum(axis=0))
            grads.append(g.T @ cache.inputs[layer])
            g = g @ self.weights[layer]
        grads.reverse()
        return flatten(grads)

    def jvp(self, x: FloatArray, direction: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Forward-mode product: outputs and their derivative along ``direction``."""
        tangent = Mlp.from_flat(self.spec, direction)
        h = np.asarray(x, dtype=np.float64)
        dh = np.zeros_like(h)
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases, strict=True)):
            z = h @ w.T + b
            dz = h @ tangent.weights[layer].T + dh @ w.T + tangent.biases[layer]
            if layer == last:
                h, dh = z, dz
            else:
                h, dh = self._activate(z), self._activation_slope(z) * dz
        return h, dh


class GaussianPolicy:
    """Diagonal Gaussian policy: MLP mean and a state-independent log std."""

    def __init__(self, mean_net: Mlp, log_std: FloatArray) -> None:
        log_std = np.asarray(log_std, dtype=np.float64)
        if log_std.shape != (mean_net.spec.output_width,):
            raise ValueError("log_std length must equal the mean network output width.")
        self.mean_net = mean_net
        self.log_std = log_std

    @classmethod
    def initialize(
        cls,
        spec: MlpSpec,
        rng: np.random.Generator,
        *,
        init_std: float = 1.0,
        output_gain: float = 0.01,
    ) -> GaussianPolicy:
        if not init_std > 0:
            raise ValueError("init_std must be positive.")
        mean_net = Mlp.initialize(spec, rng, output_gain=output_gain)
        return cls(mean_net, np.full(spec.output_width, np.log(init_std)))

    @property
    def obs_dim(self) -> int:
        return self.mean_net.spec.input_width

    @property
    def act_dim(self) -> int:
        return self.mean_net.spec.output_width

    @property
    def std(self) -> FloatArray:
        return np.exp(self.log_std)

    @property
    def num_params(self) -> int:
        return self.mean_net.num_params + self.act_dim

    def flat(self) -> FloatArray:
        return np.concatenate([self.mean_net.flat(), self.log_std])

    def with_flat(self, flat: FloatArray) -> GaussianPolicy:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise ValueError(f"Expected {self.num_params} policy parameters, got shape {flat.shape}.")
        split = self.mean_net.num_params
        return GaussianPolicy(Mlp.from_flat(self.mean_net.spec, flat[:split]), flat[split:].copy())

    def split(self, flat: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Split a policy-shaped vector into its mean-network and log-std parts."""
        split = self.mean_net.num_params
        return flat[:split], flat[split:]


def policy_forward(policy: GaussianPolicy, states: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Action means for a batch of states and the shared std vector."""
    means, _ = policy.mean_net.forward(states)
    return means, policy.std


class ValueNet:
    """Scalar state-value critic."""

    def __init__(self, mlp: Mlp) -> None:
        if mlp.spec.output_width != 1:
            raise ValueError("ValueNet requires a single output.")
        self.mlp = mlp

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator) -> ValueNet:
        return cls(Mlp.initialize(spec, rng, output_gain=1.0))

    @property
    def num_params(self) -> int:
        return self.mlp.num_params

    @property
    def heads(self) -> int:
        return 1

    def flat(self) -> FloatArray:
        return self.mlp.flat()

    def with_flat(self, flat: FloatArray) -> ValueNet:
        return ValueNet(Mlp.from_flat(self.mlp.spec, flat))

    def predict(self, states: FloatArray) -> FloatArray:
        return self.mlp(states)[:, 0]


class CostCritic(Protocol):
    """Common interface of the multi-head and separate cost critics."""

    @property
    def heads(self) -> int: ...

    @property
    def num_params(self) -> int: ...

    def flat(self) -> FloatArray: ...

    def with_flat(self, flat: FloatArray) -> CostCritic: ...

    def predict(self, states: FloatArray) -> FloatArray: ...

    def output_grad(self, states: FloatArray, grad_output: FloatArray) -> FloatArray: ...


class MultiHeadCostValueNet:
    """One trunk, one output head per constrained cost channel."""

    def __init__(self, mlp: Mlp) -> None:
        self.mlp = mlp

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator) -> MultiHeadCostValueNet:
        return cls(Mlp.initialize(spec, rng, output_gain=1.0))

    @property
    def heads(self) -> int:
        return self.mlp.spec.output_width

    @property
    def num_params(self) -> int:
        return self.mlp.num_params

    def flat(self) -> FloatArray:
        return self.mlp.flat()

    def with_flat(self, flat: FloatArray) -> MultiHeadCostValueNet:
        return MultiHeadCostValueNet(Mlp.from_flat(self.mlp.spec, flat))

    def predict(self, states: FloatArray) -> FloatArray:
        return self.mlp(states)

    def output_grad(self, states: FloatArray, grad_output: FloatArray) -> FloatArray:
        _, cache = self.mlp.forward(states)
        return self.mlp.backward(cache, grad_output)


class SeparateCostValueNets:
    """Independent single-output critics, one per cost channel."""

    def __init__(self, mlps: Sequence[Mlp]) -> None:
        if not mlps:
            raise ValueError("SeparateCostValueNets needs at least one critic.")
        for mlp in mlps:
            if mlp.spec.output_width != 1:
                raise ValueError("Each separate cost critic must have a single output.")
        self.mlps = list(mlps)

    @classmethod
    def initialize(cls, spec: MlpSpec, heads: int, rng: np.random.Generator) -> SeparateCostValueNets:
        single = MlpSpec(spec.layer_widths[:-1] + (1,), spec.activation, spec.leaky_slope)
        return cls([Mlp.initialize(single, rng, output_gain=1.0) for _ in range(heads)])

    @property
    def heads(self) -> int:
        return len(self.mlps)

    @property
    def num_params(self) -> int:
        return sum(m.num_params for m in self.mlps)

    def flat(self) -> FloatArray:
        return flatten([m.flat() for m in self.mlps])

    def with_flat(self, flat: FloatArray) -> SeparateCostValueNets:
        sizes = [m.num_params for m in self.mlps]
        offsets = np.cumsum([0, *sizes])
        return SeparateCostValueNets(
            [
                Mlp.from_flat(m.spec, flat[offsets[i] : offsets[i + 1]])
                for i, m in enumerate(self.mlps)
            ]
        )

    def predict(self, states: FloatArray) -> FloatArray:
        return np.column_stack([m(states)[:, 0] for m in self.mlps])

    def output_grad(self, states: FloatArray, grad_output: FloatArray) -> FloatArray:
        grads = []
        for head, mlp in enumerate(self.mlps):
            _, cache = mlp.forward(states)
            grads.append(mlp.backward(cache, grad_output[:, head : head + 1]))
        return flatten(grads)


Network = GaussianPolicy | ValueNet | MultiHeadCostValueNet | SeparateCostValueNets

_KIND_POLICY = 1
_KIND_VALUE = 2
_KIND_MULTI_HEAD = 3
_KIND_SEPARATE = 4


def _network_specs(network: Network) -> tuple[int, list[MlpSpec]]:
    if isinstance(network, GaussianPolicy):
        return _KIND_POLICY, [network.mean_net.spec]
    if isinstance(network, ValueNet):
        return _KIND_VALUE, [network.mlp.spec]
    if isinstance(network, MultiHeadCostValueNet):
        return _KIND_MULTI_HEAD, [network.mlp.spec]
    if isinstance(network, SeparateCostValueNets):
        return _KIND_SEPARATE, [m.spec for m in network.mlps]
    raise TypeError(f"Unsupported network type: {type(network).__name__}")


def encode_network(network: Network) -> bytes:
    """Serialize a network: header (magic, version, kind, MlpSpecs) then FlatParams.

    All integers and floats are little-endian; parameters are 64-bit floats
    in canonical order.
    """
    kind, specs = _network_specs(network)
    parts = [CHECKPOINT_MAGIC, struct.pack("<HBH", CHECKPOINT_VERSION, kind, len(specs))]
    for spec in specs:
        parts.append(
            struct.pack(
                "<BdH",
                _ACTIVATION_CODES[spec.activation],
                spec.leaky_slope,
                len(spec.layer_widths),
            )
        )
        parts.append(struct.pack(f"<{len(spec.layer_widths)}I", *spec.layer_widths))
    flat = network.flat()
    parts.append(struct.pack("<Q", flat.size))
    parts.append(flat.astype("<f8").tobytes())
    return b"".join(parts)


def decode_network(payload: bytes) -> Network:
    try:
        return _decode_network(payload)
    except struct.error as exc:
        raise CheckpointError("Network payload is truncated.") from exc


def _decode_network(payload: bytes) -> Network:
    view = memoryview(payload)
    if bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise CheckpointError("Network payload does not start with the expected magic bytes.")
    offset = 4
    version, kind, n_specs = struct.unpack_from("<HBH", view, offset)
    offset += struct.calcsize("<HBH")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported network checkpoint version {version}.")
    codes = {code: act for act, code in _ACTIVATION_CODES.items()}
    specs: list[MlpSpec] = []
    for _ in range(n_specs):
        code, slope, n_widths = struct.unpack_from("<BdH", view, offset)
        offset += struct.calcsize("<BdH")
        widths = struct.unpack_from(f"<{n_widths}I", view, offset)
        offset += 4 * n_widths
        if code not in codes:
            raise CheckpointError(f"Unknown activation code {code}.")
        specs.append(MlpSpec(tuple(widths), codes[code], slope))
    (size,) = struct.unpack_from("<Q", view, offset)
    offset += 8
    if len(payload) - offset != 8 * size:
        raise CheckpointError("Network payload length does not match its parameter count.")
    flat = np.frombuffer(payload, dtype="<f8", count=size, offset=offset).astype(np.float64)

    if kind == _KIND_POLICY:
        spec = specs[0]
        split = spec.num_params
        if size != split + spec.output_width:
            raise CheckpointError("Policy parameter count does not match its MlpSpec.")
        return GaussianPolicy(Mlp.from_flat(spec, flat[:split]), flat[split:].copy())
    if sum(s.num_params for s in specs) != size:
        raise CheckpointError("Parameter count does not match the MlpSpecs.")
    if kind == _KIND_VALUE:
        return ValueNet(Mlp.from_flat(specs[0], flat))
    if kind == _KIND_MULTI_HEAD:
        return MultiHeadCostValueNet(Mlp.from_flat(specs[0], flat))
    if kind == _KIND_SEPARATE:
        offsets = np.cumsum([0, *(s.num_params for s in specs)])
        return SeparateCostValueNets(
            [Mlp.from_flat(s, flat[offsets[i] : offsets[i + 1]]) for i, s in enumerate(specs)]
        )
    raise CheckpointError(f"Unknown network kind {kind}.")


__all__ = [
    "Activation",
    "CostCritic",
    "GaussianPolicy",
    "Mlp",
    "MlpSpec",
    "MultiHeadCostValueNet",
    "Network",
    "SeparateCostValueNets",
    "ValueNet",
    "decode_network",
    "encode_network",
    "flatten",
    "policy_forward",
    "unflatten",
]
