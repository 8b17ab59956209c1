"""Minimal dense neural-network engine.

Models are immutable stacks of named dense layers organised into three
sensor branches (gps, lidar, image) plus a fusion head ending in a
softmax sector classifier. Training is plain minibatch SGD on categorical
cross-entropy, deterministic given (seed, data, config).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import _backend as K

ACTIVATIONS = ("relu", "softmax", "identity")
SUBMODELS = ("gps", "lidar", "image", "fusion")
BRANCHES = ("gps", "lidar", "image")

_MODEL_MAGIC = b"SGLM"
_MODEL_VERSION = 1


class ShapeError(ValueError):
    """Tensor dimensions do not match the model architecture."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


def _as_f64(a, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DenseLayer:
    """One dense layer: y = act(x @ weights.T + bias)."""

    name: str
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        w = _as_f64(self.weights, f"layer {self.name!r} weights")
        b = _as_f64(self.bias, f"layer {self.name!r} bias")
        if w.ndim != 2:
            raise ShapeError(f"layer {self.name!r}: weights must be 2-D")
        if b.shape != (w.shape[0],):
            raise ShapeError(
                f"layer {self.name!r}: bias shape {b.shape} does not match "
                f"out_dim {w.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"layer {self.name!r}: unknown activation {self.activation!r}")
        object.__setattr__(self, "weights", _frozen(w.copy()))
        object.__setattr__(self, "bias", _frozen(b.copy()))

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def param_count(self) -> int:
        return self.weights.size + self.bias.size

    def with_params(self, weights, bias) -> "DenseLayer":
        return DenseLayer(self.name, weights, bias, self.activation)


@dataclass(frozen=True, eq=False)
class Model:
    """Ordered dense layers split into sensor branches plus a fusion head.

    ``submodel_map`` assigns each layer name to one of gps / lidar /
    image / fusion. Branch chains consume disjoint column blocks of the
    input (gps | lidar | image order); their outputs are concatenated
    and fed to the fusion chain, whose last layer emits ``n_sectors``
    logits. ``forward`` always normalises that final pre-activation with
    softmax, so the output layer's activation label may be either
    "softmax" or "identity".
    """

    layers: tuple[DenseLayer, ...]
    submodel_map: dict[str, str]
    n_sectors: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "submodel_map", dict(self.submodel_map))
        if not self.layers:
            raise ValueError("model has no layers")
        if self.n_sectors < 1:
            raise ValueError("n_sectors must be positive")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("duplicate layer names")
        if set(names) != set(self.submodel_map):
            raise ValueError("submodel_map must cover exactly the model layers")
        for name, sub in self.submodel_map.items():
            if sub not in SUBMODELS:
                raise ValueError(f"layer {name!r}: unknown submodel {sub!r}")
        fusion = self.chain("fusion")
        if not fusion:
            raise ValueError("model needs at least one fusion layer")
        for layer in self.layers:
            if layer.activation == "softmax" and layer is not fusion[-1]:
                raise ValueError(
                    f"softmax only allowed on the output layer, found on {layer.name!r}"
                )
        if fusion[-1].out_dim != self.n_sectors:
            raise ShapeError(
                f"output layer {fusion[-1].name!r} emits {fusion[-1].out_dim} "
                f"units, expected n_sectors={self.n_sectors}"
            )
        for branch in SUBMODELS:
            chain = self.chain(branch)
            for prev, cur in zip(chain, chain[1:]):
                if cur.in_dim != prev.out_dim:
                    raise ShapeError(
                        f"layer {cur.name!r} expects in_dim {cur.in_dim} but "
                        f"{prev.name!r} emits {prev.out_dim}"
                    )
        branch_out = sum(self.chain(b)[-1].out_dim for b in BRANCHES if self.chain(b))
        if branch_out and fusion[0].in_dim != branch_out:
            raise ShapeError(
                f"fusion head {fusion[0].name!r} expects in_dim "
                f"{fusion[0].in_dim} but branches emit {branch_out}"
            )

    def chain(self, submodel: str) -> tuple[DenseLayer, ...]:
        return tuple(l for l in self.layers if self.submodel_map[l.name] == submodel)

    def layer(self, name: str) -> DenseLayer:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    @property
    def layer_names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.layers)

    @property
    def output_layer_name(self) -> str:
        return self.chain("fusion")[-1].name

    @property
    def branch_input_dims(self) -> dict[str, int]:
        """Input column widths per branch, gps | lidar | image order."""
        dims = {}
        for b in BRANCHES:
            chain = self.chain(b)
            if chain:
                dims[b] = chain[0].in_dim
        return dims

    @property
    def input_dim(self) -> int:
        dims = self.branch_input_dims
        if dims:
            return sum(dims.values())
        return self.chain("fusion")[0].in_dim

    def with_layers(self, new_layers: dict[str, DenseLayer]) -> "Model":
        """Copy of the model with some layers replaced (matched by name)."""
        layers = tuple(new_layers.get(l.name, l) for l in self.layers)
        return Model(layers, self.submodel_map, self.n_sectors)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    batch_size: int = 32
    local_epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        # learning_rate 0 is allowed as an explicit no-op degenerate case
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")


@dataclass(frozen=True)
class Architecture:
    """Widths of the default three-branch sector classifier."""

    gps_input: int = 2
    lidar_input: int = 16
    image_input: int = 16
    gps_hidden: tuple[int, ...] = (16, 8)
    lidar_hidden: tuple[int, ...] = (32, 16)
    image_hidden: tuple[int, ...] = (32, 16)
    fusion_hidden: tuple[int, ...] = (64,)
    n_sectors: int = 34


def build_model(arch: Architecture, seed: int) -> Model:
    """Construct a freshly initialised model.

    Weights are Glorot-uniform in +-sqrt(6 / (fan_in + fan_out)), biases
    zero; the draw order is fixed so the same seed always yields the same
    model.
    """
    rng = np.random.default_rng(seed)
    layers = []
    submodel_map = {}

    def add_chain(branch, in_dim, widths, final_act=None):
        for i, out_dim in enumerate(widths):
            limit = np.sqrt(6.0 / (in_dim + out_dim))
            w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
            act = "relu"
            if final_act is not None and i == len(widths) - 1:
                act = final_act
            name = f"{branch}_{i}" if act != "softmax" else "output"
            layers.append(DenseLayer(name, w, np.zeros(out_dim), act))
            submodel_map[name] = branch
            in_dim = out_dim

    add_chain("gps", arch.gps_input, arch.gps_hidden)
    add_chain("lidar", arch.lidar_input, arch.lidar_hidden)
    add_chain("image", arch.image_input, arch.image_hidden)
    fusion_in = arch.gps_hidden[-1] + arch.lidar_hidden[-1] + arch.image_hidden[-1]
    add_chain("fusion", fusion_in, (*arch.fusion_hidden, arch.n_sectors), final_act="softmax")
    return Model(tuple(layers), submodel_map, arch.n_sectors)


def architecture_table(model: Model) -> list[dict]:
    """Per-layer summary rows: name, submodel, dims and parameter count."""
    return [
        {
            "name": l.name,
            "submodel": model.submodel_map[l.name],
            "in_dim": l.in_dim,
            "out_dim": l.out_dim,
            "params": l.param_count,
        }
        for l in model.layers
    ]


# ---------------------------------------------------------------------------
# forward / backward


def _check_batch(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("batch must be 2-D (samples x features)")
    if x.shape[1] != model.input_dim:
        raise ShapeError(
            f"batch has {x.shape[1]} features, model expects {model.input_dim}"
        )
    return x


def _branch_slices(model: Model) -> dict[str, slice]:
    out = {}
    start = 0
    for b, width in model.branch_input_dims.items():
        out[b] = slice(start, start + width)
        start += width
    return out


def _chain_apply(chain, h):
    """Run a layer chain; the last fusion layer is handled by the caller."""
    for layer in chain:
        if h.shape[1] != layer.in_dim:
            raise ShapeError(
                f"layer {layer.name!r} expects in_dim {layer.in_dim}, got {h.shape[1]}"
            )
        z = K.affine(h, layer.weights, layer.bias)
        h = K.relu(z) if layer.activation == "relu" else z
    return h


def _forward_impl(model: Model, x: np.ndarray):
    slices = _branch_slices(model)
    parts = []
    for b in BRANCHES:
        chain = model.chain(b)
        if chain:
            parts.append(_chain_apply(chain, x[:, slices[b]]))
    h = np.concatenate(parts, axis=1) if parts else x
    fusion = model.chain("fusion")
    h = _chain_apply(fusion[:-1], h)
    out_layer = fusion[-1]
    if h.shape[1] != out_layer.in_dim:
        raise ShapeError(
            f"layer {out_layer.name!r} expects in_dim {out_layer.in_dim}, got {h.shape[1]}"
        )
    z = K.affine(h, out_layer.weights, out_layer.bias)
    return K.softmax_rows(z)


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch, shape (batch, n_sectors).

    Rows are softmax distributions; the final pre-activation is always
    normalised regardless of the output layer's activation label.
    """
    return _forward_impl(model, _check_batch(model, batch))


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)
    return float(-np.mean(np.log(p)))


def _loss_and_grads(model_arrays, model: Model, x, y):
    """Forward + backward over one batch on mutable parameter arrays.

    ``model_arrays`` maps layer name -> (weights, bias) working copies;
    returns (batch mean loss, grads dict name -> (dw, db)).
    """
    slices = _branch_slices(model)
    caches = {}
    parts = []
    for b in BRANCHES:
        chain = model.chain(b)
        if not chain:
            continue
        cache = []
        h = x[:, slices[b]]
        for layer in chain:
            w, bias = model_arrays[layer.name]
            z = K.affine(h, w, bias)
            cache.append((h, z))
            h = K.relu(z) if layer.activation == "relu" else z
        caches[b] = cache
        parts.append(h)
    h = np.concatenate(parts, axis=1) if parts else x
    fusion = model.chain("fusion")
    cache = []
    for layer in fusion:
        w, bias = model_arrays[layer.name]
        z = K.affine(h, w, bias)
        cache.append((h, z))
        if layer is fusion[-1]:
            h = K.softmax_rows(z)
        else:
            h = K.relu(z) if layer.activation == "relu" else z
    caches["fusion"] = cache
    probs = h
    loss = cross_entropy(probs, y)

    grads = {}
    batch = x.shape[0]
    # combined softmax + cross-entropy gradient w.r.t. the output logits
    delta = probs.copy()
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    def chain_backward(chain_layers, chain_cache, delta, last_is_preact):
        """delta w.r.t. the chain output (post-act, or pre-act of the last
        layer when last_is_preact); returns delta w.r.t. the chain input."""
        for idx in range(len(chain_layers) - 1, -1, -1):
            layer = chain_layers[idx]
            h_in, z = chain_cache[idx]
            if not (last_is_preact and idx == len(chain_layers) - 1):
                if layer.activation == "relu":
                    delta = K.relu_backward(delta, z)
            w, _ = model_arrays[layer.name]
            delta, dw, db = K.affine_backward(delta, h_in, w)
            grads[layer.name] = (dw, db)
        return delta

    delta = chain_backward(fusion, caches["fusion"], delta, last_is_preact=True)
    col = 0
    for b in BRANCHES:
        chain = model.chain(b)
        if not chain:
            continue
        width = chain[-1].out_dim
        chain_backward(chain, caches[b], delta[:, col : col + width], last_is_preact=False)
        col += width
    return loss, grads


def train_local(model: Model, data, cfg: TrainConfig) -> Model:
    """Minibatch-SGD train a copy of the model on the dataset's train split.

    Deterministic given (seed, data, config). Raises
    :class:`DivergenceError` naming the epoch if the loss goes non-finite.
    """
    x = data.features[data.train_idx]
    y = data.labels[data.train_idx]
    if len(y) == 0:
        raise ValueError("training split is empty")
    if y.min() < 0 or y.max() >= model.n_sectors:
        raise ValueError("labels outside [0, n_sectors)")
    x = _check_batch(model, x)

    arrays = {l.name: (l.weights.copy(), l.bias.copy()) for l in model.layers}
    rng = np.random.default_rng(cfg.seed)
    n = len(y)
    for epoch in range(cfg.local_epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grads = _loss_and_grads(arrays, model, x[idx], y[idx])
            total += loss * len(idx)
            for name, (dw, db) in grads.items():
                w, b = arrays[name]
                K.sgd_step(w, dw, cfg.learning_rate)
                K.sgd_step(b, db, cfg.learning_rate)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"training loss diverged at epoch {epoch + 1}")
    new_layers = {
        name: model.layer(name).with_params(w, b) for name, (w, b) in arrays.items()
    }
    return model.with_layers(new_layers)


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    correct: np.ndarray  # bool per sample, argmax == label

    def __post_init__(self):
        object.__setattr__(self, "correct", np.asarray(self.correct, dtype=bool))


def evaluate(model: Model, data) -> EvalResult:
    """Top-1 accuracy over all samples of the dataset.

    Ties in the probability vector resolve to the lowest sector index.
    """
    if len(data.labels) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    probs = forward(model, data.features)
    pred = np.argmax(probs, axis=1)
    correct = pred == data.labels
    return EvalResult(float(np.mean(correct)), correct)


def param_count(model: Model, layer_subset=None) -> int:
    """Weights + biases over the subset (all layers when subset is None)."""
    if layer_subset is None:
        return sum(l.param_count for l in model.layers)
    names = set(model.layer_names)
    total = 0
    for name in layer_subset:
        if name not in names:
            raise KeyError(name)
        total += model.layer(name).param_count
    return total


# ---------------------------------------------------------------------------
# serialization: magic + version + JSON header + little-endian float64 blobs


def save_model(model: Model, path) -> None:
    header = {
        "n_sectors": model.n_sectors,
        "layers": [
            {
                "name": l.name,
                "activation": l.activation,
                "submodel": model.submodel_map[l.name],
                "out_dim": l.out_dim,
                "in_dim": l.in_dim,
            }
            for l in model.layers
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MODEL_MAGIC)
        f.write(struct.pack("<II", _MODEL_VERSION, len(blob)))
        f.write(blob)
        for l in model.layers:
            f.write(l.weights.astype("<f8").tobytes())
            f.write(l.bias.astype("<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MODEL_MAGIC:
            raise ValueError(f"not a model file: bad magic {magic!r}")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != _MODEL_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        header = json.loads(f.read(hlen).decode("utf-8"))
        layers = []
        submodel_map = {}
        for spec in header["layers"]:
            out_dim, in_dim = spec["out_dim"], spec["in_dim"]
            w = np.frombuffer(f.read(8 * out_dim * in_dim), dtype="<f8").reshape(
                out_dim, in_dim
            )
            b = np.frombuffer(f.read(8 * out_dim), dtype="<f8")
            layers.append(DenseLayer(spec["name"], w, b, spec["activation"]))
            submodel_map[spec["name"]] = spec["submodel"]
    return Model(tuple(layers), submodel_map, header["n_sectors"])
