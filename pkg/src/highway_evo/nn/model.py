"""Layer objects, the sequential Model container, and the network builder.

build_network turns a decoded architecture description into a trainable
model: per module an optional 1x1 channel projection, a run of highway
convolution layers with spatial kernel schedule 3, 2, 1, 1, ..., max
pooling, and batch normalization; then flatten, two dense layers, and a
width-10 softmax head.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from ..codec import NetworkSpec, bits_from_str, decode
from . import ops

NUM_CLASSES = 10
# channel width used when the genotype's filter field is read as a spatial
# kernel size instead (the alternative interpretation of that field)
KERNEL_MODE_FILTERS = 16
MAGIC = b"HWEV"
FORMAT_VERSION = 1
_DTYPE_CODES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


class Parameter:
    """Named trainable array with its most recent gradient."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = data
        self.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _xavier_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D:
    """Plain stride-1 convolution; used as the 1x1 channel projection."""

    def __init__(self, name, in_channels, filters, kernel, rng, dtype):
        self.name = name
        fan = kernel * kernel
        self.weight = Parameter(
            name + ".weight",
            _xavier_uniform(
                rng, (filters, in_channels, kernel, kernel),
                in_channels * fan, filters * fan, dtype,
            ),
        )
        self.bias = Parameter(name + ".bias", np.zeros(filters, dtype))

    def parameters(self):
        return [self.weight, self.bias]

    def buffers(self):
        return []

    def forward(self, x, training):
        out, self._cache = ops.conv2d_forward(x, self.weight.data, self.bias.data)
        return out

    def backward(self, grad):
        grad_x, self.weight.grad, self.bias.grad = ops.conv2d_backward(grad, self._cache)
        self._cache = None
        return grad_x

    def output_shape(self, shape):
        _, height, width = shape
        return (self.weight.data.shape[0], height, width)


class HighwayConv:
    """Highway convolution layer: gated carry/transform combination."""

    def __init__(self, name, channels, kernel, activation, rng, dtype):
        self.name = name
        self.activation = activation
        fan = channels * kernel * kernel
        shape = (channels, channels, kernel, kernel)
        self.conv_w = Parameter(name + ".conv_w", _xavier_uniform(rng, shape, fan, fan, dtype))
        self.conv_b = Parameter(name + ".conv_b", np.zeros(channels, dtype))
        self.gate_w = Parameter(name + ".gate_w", _xavier_uniform(rng, shape, fan, fan, dtype))
        # bias the transform gate toward the carry path early in training
        self.gate_b = Parameter(name + ".gate_b", np.full(channels, -2.0, dtype))
        self.alpha = (
            Parameter(name + ".alpha", np.full(channels, 0.25, dtype))
            if activation == "prelu"
            else None
        )

    def parameters(self):
        params = [self.conv_w, self.conv_b, self.gate_w, self.gate_b]
        if self.alpha is not None:
            params.append(self.alpha)
        return params

    def buffers(self):
        return []

    def _params_view(self):
        return ops.HighwayLayerParams(
            self.conv_w.data, self.conv_b.data, self.gate_w.data, self.gate_b.data
        )

    def forward(self, x, training):
        alpha = None if self.alpha is None else self.alpha.data
        out, self._cache = ops.highway_forward(x, self._params_view(), self.activation, alpha)
        return out

    def backward(self, grad):
        grad_x, grads, grad_alpha = ops.highway_backward(grad, self._cache)
        self.conv_w.grad = grads.conv_weights
        self.conv_b.grad = grads.conv_bias
        self.gate_w.grad = grads.transform_weights
        self.gate_b.grad = grads.transform_bias
        if self.alpha is not None:
            self.alpha.grad = grad_alpha
        self._cache = None
        return grad_x

    def output_shape(self, shape):
        return shape


class MaxPool:
    """Non-overlapping max pooling; pool size 1 is the identity."""

    def __init__(self, name, pool_size):
        self.name = name
        self.pool_size = pool_size

    def parameters(self):
        return []

    def buffers(self):
        return []

    def forward(self, x, training):
        out, self._cache = ops.maxpool_forward(x, self.pool_size)
        return out

    def backward(self, grad):
        grad_x = ops.maxpool_backward(grad, self._cache)
        self._cache = None
        return grad_x

    def output_shape(self, shape):
        channels, height, width = shape
        return (channels, height // self.pool_size, width // self.pool_size)


class BatchNorm:
    """Per-channel batch normalization with running evaluation statistics."""

    def __init__(self, name, channels, dtype):
        self.name = name
        self.gamma = Parameter(name + ".gamma", np.ones(channels, dtype))
        self.beta = Parameter(name + ".beta", np.zeros(channels, dtype))
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [
            (self.name + ".running_mean", self.running_mean),
            (self.name + ".running_var", self.running_var),
        ]

    def forward(self, x, training):
        out, self._cache = ops.batchnorm_forward(
            x, self.gamma.data, self.beta.data,
            self.running_mean, self.running_var, training=training,
        )
        return out

    def backward(self, grad):
        grad_x, self.gamma.grad, self.beta.grad = ops.batchnorm_backward(grad, self._cache)
        self._cache = None
        return grad_x

    def output_shape(self, shape):
        return shape


class Flatten:
    """Collapses [B, C, H, W] activations to [B, C*H*W] rows."""

    def __init__(self, name):
        self.name = name

    def parameters(self):
        return []

    def buffers(self):
        return []

    def forward(self, x, training):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        shape = self._cache
        self._cache = None
        return grad.reshape(shape)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class Dense:
    """Affine layer with an optional activation (None for the softmax head)."""

    def __init__(self, name, in_dim, units, activation, rng, dtype):
        self.name = name
        self.activation = activation
        self.weight = Parameter(
            name + ".weight", _xavier_uniform(rng, (in_dim, units), in_dim, units, dtype)
        )
        self.bias = Parameter(name + ".bias", np.zeros(units, dtype))
        self.alpha = (
            Parameter(name + ".alpha", np.full(units, 0.25, dtype))
            if activation == "prelu"
            else None
        )

    def parameters(self):
        params = [self.weight, self.bias]
        if self.alpha is not None:
            params.append(self.alpha)
        return params

    def buffers(self):
        return []

    def forward(self, x, training):
        out, affine_cache = ops.dense_forward(x, self.weight.data, self.bias.data)
        act_cache = None
        if self.activation is not None:
            alpha = None if self.alpha is None else self.alpha.data
            out, act_cache = ops.activation_forward(self.activation, out, alpha)
        self._cache = (affine_cache, act_cache)
        return out

    def backward(self, grad):
        affine_cache, act_cache = self._cache
        if act_cache is not None:
            grad, grad_alpha = ops.activation_backward(grad, act_cache)
            if self.alpha is not None:
                self.alpha.grad = grad_alpha
        grad_x, self.weight.grad, self.bias.grad = ops.dense_backward(grad, affine_cache)
        self._cache = None
        return grad_x

    def output_shape(self, shape):
        return (self.weight.data.shape[1],)


class Model:
    """Sequential network with a recorded, auditable per-layer shape trace.

    shape_trace lists (layer_name, per-sample output shape) from the input
    onward; genotype_bits carries the originating genotype for serialization.
    """

    def __init__(self, layers, shape_trace, genotype_bits=None):
        self.layers = list(layers)
        self.shape_trace = list(shape_trace)
        self.genotype_bits = genotype_bits

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def buffers(self):
        return [b for layer in self.layers for b in layer.buffers()]

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())

    def forward(self, x, training=False):
        for index, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, training)
            except ValueError as exc:
                raise ValueError(f"layer {index} ({layer.name}): {exc}") from None
            if ops.DEBUG_CHECK_FINITE and not np.isfinite(x).all():
                raise ops.TrainingDiverged(
                    f"non-finite activations after layer {index} ({layer.name})"
                )
        return x

    def backward(self, grad):
        for index in range(len(self.layers) - 1, -1, -1):
            grad = self.layers[index].backward(grad)
            if ops.DEBUG_CHECK_FINITE and not np.isfinite(grad).all():
                raise ops.TrainingDiverged(
                    f"non-finite gradients after layer {index} "
                    f"({self.layers[index].name})"
                )
        return grad


def build_network(
    spec: NetworkSpec,
    input_shape=(1, 28, 28),
    rng=None,
    dtype=np.float32,
    genotype_bits=None,
    filters_as_kernels=False,
) -> Model:
    """Constructs the model a decoded genotype describes.

    Layer j (0-based) of each module gets spatial kernel max(1, 3 - j),
    realizing the decreasing schedule 3, 2, 1, 1, ... A 1x1 projection is
    inserted at module entry when the incoming channel count differs from
    the filter count, and a pool that would erase a spatial dimension is
    skipped for that module.

    With ``filters_as_kernels`` the genotype's filter field is read under
    its alternative meaning: one shared spatial kernel size for every
    highway convolution, with the channel width fixed at
    ``KERNEL_MODE_FILTERS``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    dtype = np.dtype(dtype)
    channels, height, width = input_shape
    filters = KERNEL_MODE_FILTERS if filters_as_kernels else spec.filters
    layers = []
    trace = [("input", (channels, height, width))]

    def push(layer, shape):
        shape = layer.output_shape(shape)
        layers.append(layer)
        trace.append((layer.name, shape))
        return shape

    shape = (channels, height, width)
    for m in range(spec.num_modules):
        if shape[0] != filters:
            shape = push(Conv2D(f"module{m}.project", shape[0], filters, 1, rng, dtype), shape)
        for j in range(spec.layers_per_module):
            kernel = spec.filters if filters_as_kernels else max(1, 3 - j)
            shape = push(
                HighwayConv(f"module{m}.highway{j}", shape[0], kernel, spec.highway_activation, rng, dtype),
                shape,
            )
        if shape[1] >= spec.pool_size and shape[2] >= spec.pool_size:
            shape = push(MaxPool(f"module{m}.pool", spec.pool_size), shape)
        shape = push(BatchNorm(f"module{m}.norm", shape[0], dtype), shape)
    shape = push(Flatten("flatten"), shape)
    shape = push(Dense("dense1", shape[0], spec.dense1_units, spec.dense_activation, rng, dtype), shape)
    shape = push(Dense("dense2", shape[0], spec.dense2_units, spec.dense_activation, rng, dtype), shape)
    push(Dense("head", shape[0], NUM_CLASSES, None, rng, dtype), shape)
    return Model(layers, trace, genotype_bits)


def _model_entries(model: Model):
    return [(p.name, p.data) for p in model.parameters()] + list(model.buffers())


def save_model(model: Model, path) -> None:
    """Writes the model in the HWEV binary format.

    Layout: magic, format version, dtype code, genotype bit string, then one
    shape-tagged little-endian array block per parameter and buffer.
    """
    if model.genotype_bits is None:
        raise ValueError("only genotype-derived models can be serialized")
    entries = _model_entries(model)
    dtype_code = entries[0][1].dtype.str.lstrip("<>|=").encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<2s", dtype_code))
        bits = model.genotype_bits.encode()
        fh.write(struct.pack("<I", len(bits)))
        fh.write(bits)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_model(path, input_shape=(1, 28, 28)) -> Model:
    """Rebuilds a saved model; the genotype in the header drives construction."""
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    offset = 0

    def take(count):
        nonlocal offset
        if offset + count > len(raw):
            raise ValueError(f"truncated model file {path}")
        chunk = view[offset:offset + count]
        offset += count
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ValueError(f"{path} is not a model file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    dtype_code = bytes(take(2)).decode()
    if dtype_code not in _DTYPE_CODES:
        raise ValueError(f"unsupported model dtype {dtype_code!r}")
    dtype = _DTYPE_CODES[dtype_code]
    (bits_len,) = struct.unpack("<I", take(4))
    bits_str = bytes(take(bits_len)).decode()
    spec = decode(bits_from_str(bits_str))
    model = build_network(spec, input_shape, dtype=dtype, genotype_bits=bits_str)
    targets = dict(_model_entries(model))
    (entry_count,) = struct.unpack("<I", take(4))
    if entry_count != len(targets):
        raise ValueError(
            f"model file has {entry_count} arrays, expected {len(targets)}"
        )
    for _ in range(entry_count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode()
        if name not in targets:
            raise ValueError(f"unexpected array {name!r} in model file")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        target = targets.pop(name)
        if dims != target.shape:
            raise ValueError(
                f"array {name!r} has shape {dims}, expected {target.shape}"
            )
        count = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(take(count * dtype.itemsize), dtype=dtype)
        target[...] = values.reshape(dims)
    if targets:
        raise ValueError(f"model file is missing arrays: {sorted(targets)}")
    return model
