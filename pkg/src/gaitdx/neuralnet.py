"""A small differentiable-layer engine in numpy (float64).

Layers work on ``(N, C, H, W)`` image batches or ``(N, D)`` vectors.
Convolutions are valid (unpadded) with a configurable stride and run as
im2col matrix products. Weight files store float32.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

WEIGHTS_MAGIC = b"GDXW"
WEIGHTS_VERSION = 1


class LayerKind(enum.IntEnum):
    FIXED_NORMALIZE = 0
    CONV = 1
    FULLY_CONNECTED = 2
    RELU = 3
    FLATTEN = 4
    SOFTMAX_CROSS_ENTROPY = 5


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


class WeightFileError(ValueError):
    pass


class CorruptWeightsError(WeightFileError):
    pass


class ArchitectureMismatchError(WeightFileError):
    pass


class Layer:
    kind: LayerKind
    param_names: tuple[str, ...] = ()

    def __init__(self):
        self.name = ""
        self.params: dict[str, np.ndarray] = {}

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def descriptor(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return ()

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, dout: np.ndarray, cache, need_dx: bool = True):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class FixedNormalize(Layer):
    """Maps 8-bit pixels ``p`` to ``p / 255 - 0.5``; no learned parameters."""

    kind = LayerKind.FIXED_NORMALIZE

    def descriptor(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return x / 255.0 - 0.5, None

    def backward(self, dout, cache, need_dx=True):
        return dout / 255.0, {}


class ReLU(Layer):
    kind = LayerKind.RELU

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, mask, need_dx=True):
        return dout * mask, {}


class Flatten(Layer):
    kind = LayerKind.FLATTEN

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def descriptor(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, shape, need_dx=True):
        return dout.reshape(shape), {}


class Conv(Layer):
    kind = LayerKind.CONV
    param_names = ("W", "b")

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1):
        super().__init__()
        if stride < 1 or kernel < 1:
            raise ShapeError("kernel and stride must be >= 1")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride = kernel, stride
        self.params = {
            "W": np.zeros((out_channels, in_channels, kernel, kernel)),
            "b": np.zeros(out_channels),
        }

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"{self.name or 'conv'}: expected ({self.in_channels}, H, W) input, got {in_shape}")
        _, h, w = in_shape
        if h < self.kernel or w < self.kernel:
            raise ShapeError(f"{self.name or 'conv'}: input {h}x{w} smaller than kernel {self.kernel}")
        oh = (h - self.kernel) // self.stride + 1
        ow = (w - self.kernel) // self.stride + 1
        return (self.out_channels, oh, ow)

    def descriptor(self, in_shape):
        return (self.out_channels, self.in_channels, self.kernel, self.kernel, self.stride)

    def init_params(self, rng):
        limit = math.sqrt(6.0 / (self.in_channels * self.kernel * self.kernel))
        self.params["W"] = rng.uniform(-limit, limit, size=self.params["W"].shape)
        self.params["b"] = np.zeros(self.out_channels)

    def _columns(self, x):
        n, c, _, _ = x.shape
        k, s = self.kernel, self.stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        oh, ow = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
        return cols, oh, ow

    def forward(self, x):
        n = x.shape[0]
        cols, oh, ow = self._columns(x)
        wmat = self.params["W"].reshape(self.out_channels, -1)
        out = cols @ wmat.T + self.params["b"]
        out = np.ascontiguousarray(out.reshape(n, oh, ow, self.out_channels).transpose(0, 3, 1, 2))
        return out, (x.shape, cols, oh, ow)

    def backward(self, dout, cache, need_dx=True):
        x_shape, cols, oh, ow = cache
        f, k, s = self.out_channels, self.kernel, self.stride
        dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
        grads = {
            "W": (dmat.T @ cols).reshape(self.params["W"].shape),
            "b": dmat.sum(axis=0),
        }
        if not need_dx:
            return None, grads
        n, c = x_shape[:2]
        dcols = (dmat @ self.params["W"].reshape(f, -1)).reshape(n, oh, ow, c, k, k)
        dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # (n, c, k, k, oh, ow)
        dx = np.zeros(x_shape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * oh : s, j : j + s * ow : s] += dcols[:, :, i, j]
        return dx, grads


class FullyConnected(Layer):
    kind = LayerKind.FULLY_CONNECTED
    param_names = ("W", "b")

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params = {"W": np.zeros((out_features, in_features)), "b": np.zeros(out_features)}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"{self.name or 'fc'}: expected ({self.in_features},) input, got {in_shape}")
        return (self.out_features,)

    def descriptor(self, in_shape):
        return (self.out_features, self.in_features)

    def init_params(self, rng):
        limit = math.sqrt(6.0 / self.in_features)
        self.params["W"] = rng.uniform(-limit, limit, size=self.params["W"].shape)
        self.params["b"] = np.zeros(self.out_features)

    def forward(self, x):
        return x @ self.params["W"].T + self.params["b"], x

    def backward(self, dout, x, need_dx=True):
        grads = {"W": dout.T @ x, "b": dout.sum(axis=0)}
        return (dout @ self.params["W"] if need_dx else None), grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxCrossEntropy:
    """Mean softmax cross-entropy over a batch and its gradient w.r.t. logits."""

    kind = LayerKind.SOFTMAX_CROSS_ENTROPY

    @staticmethod
    def loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        labels = np.asarray(labels)
        n = logits.shape[0]
        z = logits - logits.max(axis=1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -log_probs[np.arange(n), labels].mean()
        dlogits = np.exp(log_probs)
        dlogits[np.arange(n), labels] -= 1.0
        return float(loss), dlogits / n


# ---------------------------------------------------------------------------
# network


_PREFIX = {
    LayerKind.FIXED_NORMALIZE: "norm",
    LayerKind.CONV: "conv",
    LayerKind.FULLY_CONNECTED: "fc",
    LayerKind.RELU: "relu",
    LayerKind.FLATTEN: "flatten",
}


class Network:
    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], num_classes: int = 2):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.shapes = [self.input_shape]
        counters: dict[LayerKind, int] = {}
        for layer in self.layers:
            counters[layer.kind] = counters.get(layer.kind, 0) + 1
            layer.name = f"{_PREFIX[layer.kind]}{counters[layer.kind]}"
            self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
        if self.shapes[-1] != (num_classes,):
            raise ShapeError(f"network must end in {num_classes} logits, ends in {self.shapes[-1]}")
        self.velocity = [{k: np.zeros_like(v) for k, v in layer.params.items()} for layer in self.layers]
        self.version = 0

    def init_params(self, seed: int) -> "Network":
        """He-uniform weights (suited to ReLU), zero biases, from a PCG64 stream."""
        rng = np.random.Generator(np.random.PCG64(seed))
        for layer in self.layers:
            layer.init_params(rng)
        self.reset_velocity()
        self.version += 1
        return self

    def reset_velocity(self) -> None:
        self.velocity = [{k: np.zeros_like(v) for k, v in layer.params.items()} for layer in self.layers]

    def named_parameters(self):
        for layer in self.layers:
            for pname in layer.param_names:
                yield f"{layer.name}.{pname}", layer.params[pname]

    def copy_params(self) -> list[dict[str, np.ndarray]]:
        return [{k: v.copy() for k, v in layer.params.items()} for layer in self.layers]

    def descriptors(self) -> list[tuple[LayerKind, tuple[int, ...]]]:
        return [(layer.kind, layer.descriptor(shape)) for layer, shape in zip(self.layers, self.shapes)]


@dataclass
class ForwardCache:
    version: int
    batch_size: int
    layer_caches: list = field(default_factory=list)
    logits: np.ndarray | None = None


def forward(net: Network, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != net.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match input {net.input_shape}")
    cache = ForwardCache(net.version, x.shape[0])
    for layer in net.layers:
        x, c = layer.forward(x)
        cache.layer_caches.append(c)
    cache.logits = x
    return x, cache


def predict_logits(net: Network, batch: np.ndarray, chunk: int = 64) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    return np.concatenate([forward(net, batch[i : i + chunk])[0] for i in range(0, len(batch), chunk)])


def backward(net: Network, cache: ForwardCache, labels) -> tuple[list[dict[str, np.ndarray]], float]:
    """Gradients (one dict per layer, same keys as ``layer.params``) and mean loss."""
    labels = np.asarray(labels)
    if cache.version != net.version:
        raise StaleCacheError("cache was produced before the parameters last changed")
    if labels.shape != (cache.batch_size,):
        raise StaleCacheError(f"{labels.shape[0] if labels.ndim else 0} labels for a batch of {cache.batch_size}")
    if labels.size and (labels.min() < 0 or labels.max() >= cache.logits.shape[1]):
        raise ValueError("labels out of range")
    loss, dout = SoftmaxCrossEntropy.loss(cache.logits, labels)
    first_trainable = next((i for i, layer in enumerate(net.layers) if layer.params), len(net.layers))
    grads: list[dict[str, np.ndarray]] = [{} for _ in net.layers]
    for idx in range(len(net.layers) - 1, first_trainable - 1, -1):
        layer = net.layers[idx]
        dout, grads[idx] = layer.backward(dout, cache.layer_caches[idx], need_dx=idx > first_trainable)
    return grads, loss


def sgd_step(net: Network, grads, learning_rate: float, momentum: float = 0.0) -> Network:
    """``v = momentum * v - lr * g; p += v`` for every parameter, in place."""
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    for layer, g in zip(net.layers, grads):
        for pname, arr in g.items():
            if not np.all(np.isfinite(arr)):
                raise TrainingError(f"non-finite gradient in {layer.name}.{pname}")
    for layer, g, vel in zip(net.layers, grads, net.velocity):
        for pname, arr in g.items():
            v = vel[pname]
            v *= momentum
            v -= learning_rate * arr
            layer.params[pname] += v
    net.version += 1
    return net


def param_count(net: Network) -> int:
    return sum(int(arr.size) for _, arr in net.named_parameters())


# ---------------------------------------------------------------------------
# weight files


def save_weights(net: Network, path) -> None:
    chunks = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(net.layers))]
    for layer, (kind, dims) in zip(net.layers, net.descriptors()):
        chunks.append(struct.pack("<BI", int(kind), len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}I", *dims))
        for pname in layer.param_names:
            chunks.append(np.asarray(layer.params[pname], dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptWeightsError(f"weight file truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _layer_from_descriptor(kind: LayerKind, dims: tuple[int, ...]) -> Layer:
    if kind is LayerKind.FIXED_NORMALIZE:
        return FixedNormalize()
    if kind is LayerKind.RELU:
        return ReLU()
    if kind is LayerKind.FLATTEN:
        return Flatten()
    if kind is LayerKind.CONV:
        out_c, in_c, kh, kw, stride = dims
        if kh != kw:
            raise CorruptWeightsError("only square kernels are supported")
        return Conv(in_c, out_c, kh, stride)
    if kind is LayerKind.FULLY_CONNECTED:
        out_f, in_f = dims
        return FullyConnected(in_f, out_f)
    raise CorruptWeightsError(f"unknown layer kind {kind}")


_RANKS = {
    LayerKind.FIXED_NORMALIZE: (1, 2, 3),
    LayerKind.RELU: (0,),
    LayerKind.FLATTEN: (1, 2, 3),
    LayerKind.CONV: (5,),
    LayerKind.FULLY_CONNECTED: (2,),
}


def load_weights(path, expected: Network | None = None) -> Network:
    """Read a weight file; validate it against ``expected`` when given.

    Without ``expected`` the network is rebuilt from the embedded
    descriptors, which requires the first layer to record the input shape
    (FixedNormalize or Flatten).
    """
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != WEIGHTS_MAGIC:
        raise WeightFileError("bad magic; not a GDXW weight file")
    version, count = reader.unpack("<II")
    if version != WEIGHTS_VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    if expected is not None and count != len(expected.layers):
        raise ArchitectureMismatchError(f"file has {count} layers, network has {len(expected.layers)}")
    expected_desc = expected.descriptors() if expected is not None else None

    layers: list[Layer] = []
    descriptors = []
    values: list[dict[str, np.ndarray]] = []
    for idx in range(count):
        tag, rank = reader.unpack("<BI")
        try:
            kind = LayerKind(tag)
        except ValueError:
            raise CorruptWeightsError(f"unknown layer tag {tag} at layer {idx}") from None
        if kind not in _RANKS or rank not in _RANKS[kind]:
            raise CorruptWeightsError(f"layer {idx}: invalid rank {rank} for {kind.name}")
        dims = reader.unpack(f"<{rank}I")
        if expected_desc is not None:
            exp_layer = expected.layers[idx]
            if (kind, dims) != (expected_desc[idx][0], tuple(expected_desc[idx][1])):
                raise ArchitectureMismatchError(
                    f"shape mismatch at layer '{exp_layer.name}': file has {kind.name}{dims}, "
                    f"network has {expected_desc[idx][0].name}{tuple(expected_desc[idx][1])}"
                )
        layer = _layer_from_descriptor(kind, dims)
        params = {}
        for pname in layer.param_names:
            shape = layer.params[pname].shape
            n = int(np.prod(shape))
            params[pname] = np.frombuffer(reader.take(4 * n), dtype="<f4").astype(np.float64).reshape(shape)
        layers.append(layer)
        descriptors.append((kind, dims))
        values.append(params)
    if reader.pos != len(reader.data):
        raise CorruptWeightsError(f"{len(reader.data) - reader.pos} trailing bytes in weight file")

    if expected is not None:
        input_shape = expected.input_shape
    else:
        first_kind, first_dims = descriptors[0] if descriptors else (None, ())
        if first_kind not in (LayerKind.FIXED_NORMALIZE, LayerKind.FLATTEN):
            raise WeightFileError("input shape not recorded; pass the expected architecture")
        input_shape = first_dims
    net = Network(layers, input_shape)
    for layer, params in zip(net.layers, values):
        layer.params.update(params)
    return net


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / (|a| + |n|)`` in the Euclidean norm; 0 when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def _sample_indices(arr: np.ndarray, max_entries: int | None, rng: np.random.Generator):
    if max_entries is None or arr.size <= max_entries:
        return np.arange(arr.size)
    return np.sort(rng.choice(arr.size, size=max_entries, replace=False))


def _central_difference(f, arr: np.ndarray, flat_idx: np.ndarray, eps: float) -> np.ndarray:
    view = arr.reshape(-1)
    out = np.empty(len(flat_idx))
    for n, i in enumerate(flat_idx):
        old = view[i]
        view[i] = old + eps
        plus = f()
        view[i] = old - eps
        minus = f()
        view[i] = old
        out[n] = (plus - minus) / (2 * eps)
    return out


def _relu_patterns(net: Network, batch: np.ndarray, labels) -> tuple[float, list[np.ndarray]]:
    logits, cache = forward(net, batch)
    masks = [c for layer, c in zip(net.layers, cache.layer_caches) if layer.kind is LayerKind.RELU]
    return SoftmaxCrossEntropy.loss(logits, labels)[0], masks


def check_network_gradients(
    net: Network,
    batch: np.ndarray,
    labels,
    eps: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    min_eps: float = 1e-8,
    stats: dict | None = None,
) -> dict[str, float]:
    """Relative error between backprop and central differences per parameter.

    ``max_entries`` caps how many entries of each tensor are perturbed
    (sampled without replacement); ``None`` checks all of them.

    A difference quotient is only meaningful when both probes sit on the same
    linear piece of every ReLU. When the +eps and -eps probes see different
    activation patterns, the step is divided by 10 (down to ``min_eps``) and
    retried; ``stats`` (if given) receives the number of shrunk steps and of
    entries that never settled, which are still included in the error.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = np.asarray(labels)
    logits, cache = forward(net, batch)
    grads, _ = backward(net, cache, labels)
    shrunk = unsettled = 0

    errors = {}
    for layer, g in zip(net.layers, grads):
        for pname in layer.param_names:
            arr = layer.params[pname]
            view = arr.reshape(-1)
            idx = _sample_indices(arr, max_entries, rng)
            numeric = np.empty(len(idx))
            for n, i in enumerate(idx):
                old, h = view[i], eps
                while True:
                    view[i] = old + h
                    plus, m_plus = _relu_patterns(net, batch, labels)
                    view[i] = old - h
                    minus, m_minus = _relu_patterns(net, batch, labels)
                    view[i] = old
                    same = all(np.array_equal(a, b) for a, b in zip(m_plus, m_minus))
                    if same or h / 10 < min_eps:
                        unsettled += not same
                        break
                    h /= 10
                    shrunk += 1
                numeric[n] = (plus - minus) / (2 * h)
            errors[f"{layer.name}.{pname}"] = relative_error(g[pname].reshape(-1)[idx], numeric)
    if stats is not None:
        stats.update(shrunk_steps=shrunk, unsettled_entries=unsettled)
    return errors


def check_layer_gradients(layer: Layer, x: np.ndarray, eps: float = 1e-4, seed: int = 0) -> dict[str, float]:
    """Check input and parameter gradients of one layer on ``sum(out * G)``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    x = np.array(x, dtype=np.float64)
    out, cache = layer.forward(x)
    proj = rng.standard_normal(out.shape)
    dx, grads = layer.backward(proj, cache)

    def objective():
        return float((layer.forward(x)[0] * proj).sum())

    errors = {"input": relative_error(dx, _central_difference(objective, x, np.arange(x.size), eps))}
    for pname in layer.param_names:
        arr = layer.params[pname]
        numeric = _central_difference(objective, arr, np.arange(arr.size), eps)
        errors[pname] = relative_error(grads[pname], numeric)
    return errors
