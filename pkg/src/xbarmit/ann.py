"""Toy MLP classifier evaluated with crossbar-backed matrix multiplies.

The network is trained in plain numpy on Gaussian blobs. For crossbar
evaluation every layer's weight matrix is normalized to [-1, 1], mapped onto
its own crossbar through the mitigation pipeline, and the decoded outputs
are rescaled digitally. Biases stay digital.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CrossbarConfig, RngSeed
from .defects import DefectSpec, inject_defects
from .pipeline import MethodCombo, PreparedCrossbar, infer, prepare

log = logging.getLogger(__name__)

ANN_CSV_HEADER = ("defect_rate", "combo", "seed", "accuracy")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max())) + 1


def make_blobs(seed=0, n_features: int = 16, n_classes: int = 4, n_train: int = 2000,
               n_test: int = 1000, separation: float = 1.0, noise: float = 1.0) -> Dataset:
    """Isotropic Gaussian clusters around random centers.

    Centers are standard normal times ``separation``; the task gets easier
    as ``separation / noise`` grows.
    """
    rng = RngSeed(int(seed), (7,)).generator()
    centers = separation * rng.standard_normal((n_classes, n_features))

    def draw(n):
        y = rng.integers(0, n_classes, size=n)
        return centers[y] + noise * rng.standard_normal((n, n_features)), y

    x_tr, y_tr = draw(n_train)
    x_te, y_te = draw(n_test)
    return Dataset(x_tr, y_tr, x_te, y_te)


@dataclass(frozen=True)
class MlpModel:
    """ReLU MLP. ``weights[k]`` has shape ``(fan_in, fan_out)``; inputs are row vectors."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError("bias shape does not match its layer")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("model parameters must be finite")

    @property
    def scales(self) -> tuple[float, ...]:
        """Per-layer scale, ``max |W|`` (1 for an all-zero layer)."""
        return tuple(float(np.max(np.abs(W))) or 1.0 for W in self.weights)

    @property
    def normalized_weights(self) -> tuple[np.ndarray, ...]:
        return tuple(W / s for W, s in zip(self.weights, self.scales))

    def forward(self, x, matmul=None) -> np.ndarray:
        """Logits. ``matmul(k, h)`` may replace ``h @ weights[k]``."""
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = (h @ W if matmul is None else matmul(k, h)) + b
            h = z if k == last else np.maximum(z, 0.0)
        return h

    def predict(self, x, matmul=None) -> np.ndarray:
        return np.argmax(self.forward(x, matmul), axis=1)

    def accuracy(self, x, y, matmul=None) -> float:
        return float(np.mean(self.predict(x, matmul) == np.asarray(y)))


def loss_and_grads(model: MlpModel, x, y):
    """Mean softmax cross-entropy and its gradients (weights, biases)."""
    x = np.asarray(x, dtype=float)
    acts = [x]
    pre = []
    h = x
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    z = acts[-1] - acts[-1].max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = x.shape[0]
    loss = -float(logp[np.arange(n), y].mean())
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    d /= n
    gW, gb = [None] * len(model.weights), [None] * len(model.weights)
    for k in range(last, -1, -1):
        gW[k] = acts[k].T @ d
        gb[k] = d.sum(axis=0)
        if k:
            d = (d @ model.weights[k].T) * (pre[k - 1] > 0)
    return loss, gW, gb


def init_model(sizes=(16, 32, 4), seed=0) -> MlpModel:
    rng = RngSeed(int(seed), (8,)).generator()
    Ws = tuple(rng.standard_normal((a, b)) * np.sqrt(2.0 / a) for a, b in zip(sizes[:-1], sizes[1:]))
    bs = tuple(np.zeros(b) for b in sizes[1:])
    return MlpModel(Ws, bs)


def train_toy(seed=0, data: Dataset | None = None, hidden: int = 32, epochs: int = 60,
              batch_size: int = 64, lr: float = 0.05, momentum: float = 0.9,
              target_accuracy: float = 0.95, min_accuracy: float = 0.90):
    """Train the 16-32-4 toy MLP with momentum SGD; returns ``(model, data)``.

    Stops early once held-out accuracy reaches ``target_accuracy`` after at
    least a few epochs; raises :class:`TrainingError` if it ends below
    ``min_accuracy``.
    """
    data = data if data is not None else make_blobs(seed)
    n_in = data.x_train.shape[1]
    model = init_model((n_in, hidden, data.n_classes), seed)
    Ws = [W.copy() for W in model.weights]
    bs = [b.copy() for b in model.biases]
    vW = [np.zeros_like(W) for W in Ws]
    vb = [np.zeros_like(b) for b in bs]
    rng = RngSeed(int(seed), (9,)).generator()
    n = data.x_train.shape[0]
    acc = 0.0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, gW, gb = loss_and_grads(MlpModel(tuple(Ws), tuple(bs)), data.x_train[idx], data.y_train[idx])
            for k in range(len(Ws)):
                vW[k] = momentum * vW[k] - lr * gW[k]
                vb[k] = momentum * vb[k] - lr * gb[k]
                Ws[k] += vW[k]
                bs[k] += vb[k]
        model = MlpModel(tuple(Ws), tuple(bs))
        acc = model.accuracy(data.x_test, data.y_test)
        if acc >= target_accuracy and epoch >= 9:
            break
    if acc < min_accuracy:
        raise TrainingError(f"held-out accuracy {acc:.3f} below {min_accuracy} after {epochs} epochs")
    return MlpModel(tuple(W.copy() for W in Ws), tuple(b.copy() for b in bs)), data


# ---------------------------------------------------------------- crossbar evaluation


def prepare_layers(model: MlpModel, cfg: CrossbarConfig, defect_rate: float, combo: MethodCombo,
                   seed: int, on_off_ratio: float = 1.0) -> list[PreparedCrossbar]:
    """One prepared crossbar per layer; each layer gets its own defect pattern.

    Layer ``k`` uses a crossbar of the layer's shape with the electrical
    parameters of ``cfg``; ``cfg.rows``/``cfg.cols`` bound the layer size.
    """
    out = []
    for k, A in enumerate(model.normalized_weights):
        if A.shape[0] > cfg.rows or A.shape[1] > cfg.cols:
            raise ValueError(f"layer {k} of shape {A.shape} does not fit a {cfg.shape} crossbar")
        lcfg = cfg.with_size(*A.shape)
        truth = inject_defects(lcfg, DefectSpec(defect_rate, on_off_ratio, RngSeed(seed, (10, k))))
        out.append(prepare(A, lcfg, truth, combo, seed=RngSeed(seed, (11, k))))
    return out


def crossbar_matmul(model: MlpModel, layers: list[PreparedCrossbar]):
    """``matmul(k, h)`` for :meth:`MlpModel.forward` backed by the crossbars.

    Each input row is scaled to max-abs 1 before it is applied as voltages;
    the decoded output is multiplied back by that factor and the layer scale.
    """
    scales = model.scales

    def matmul(k, h):
        amp = np.max(np.abs(h), axis=1, keepdims=True)
        amp[amp == 0] = 1.0
        return infer(layers[k], h / amp) * amp * scales[k]

    return matmul


def evaluate_on_crossbar(model: MlpModel, data: Dataset, cfg: CrossbarConfig, defect_rate: float,
                         combos, seeds) -> list[tuple[float, str, int, float]]:
    """Held-out accuracy rows ``(defect_rate, combo, seed, accuracy)``."""
    rows = []
    for combo in combos:
        mc = combo if isinstance(combo, MethodCombo) else MethodCombo.from_name(combo)
        for seed in seeds:
            layers = prepare_layers(model, cfg, defect_rate, mc, int(seed))
            acc = model.accuracy(data.x_test, data.y_test, crossbar_matmul(model, layers))
            rows.append((float(defect_rate), mc.name, int(seed), acc))
    return rows


def accuracy_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ANN_CSV_HEADER)
    for rate, combo, seed, acc in rows:
        w.writerow([repr(float(rate)), combo, int(seed), repr(float(acc))])
    return buf.getvalue()


def zero_parasitic_config(rows: int = 32, cols: int = 32, **kw) -> CrossbarConfig:
    return CrossbarConfig(rows, cols, r_wire=0.0, r_in=0.0, r_out=0.0, **kw)


# ---------------------------------------------------------------- IDX files

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    """Load an IDX file (plain or ``.gz``), e.g. the 28x28 handwritten-digit sets."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 4 or raw[0] or raw[1]:
        raise ValueError(f"{path}: not an IDX file")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise ValueError(f"{path}: unknown IDX element type 0x{code:02x}")
    dims = tuple(int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))
    dtype = np.dtype(_IDX_TYPES[code])
    body = raw[4 + 4 * ndim:]
    count = int(np.prod(dims)) if dims else 1
    if len(body) != count * dtype.itemsize:
        raise ValueError(f"{path}: payload size does not match header dims {dims}")
    return np.frombuffer(body, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def load_idx_dataset(train_images, train_labels, test_images, test_labels) -> Dataset:
    """Images flattened and scaled to [0, 1]; labels as integers."""
    def images(p):
        a = read_idx(p).astype(float)
        return a.reshape(a.shape[0], -1) / (255.0 if a.max() > 1 else 1.0)

    return Dataset(images(train_images), read_idx(train_labels).astype(int),
                   images(test_images), read_idx(test_labels).astype(int))
