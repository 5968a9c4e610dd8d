"""Small differentiable classifiers with exact analytic input gradients.

All three models follow the :class:`~deltaxai.core.Classifier` contract and
are immutable. Parameters serialize to a flat vector in a fixed order
(see each class's ``PARAM_ORDER``) so checkpoints are plain JSON.

Initialization
--------------
``init_*`` constructors draw ``u_i`` for ``i = 0 .. P-1`` from SplitMix64
seeded with the 64-bit seed (state_i = seed + (i + 1) * 0x9E3779B97F4A7C15,
output mixed by the standard SplitMix64 finalizer, top 53 bits scaled to
[0, 1)). Parameter ``i`` in flat order becomes ``(2 u_i - 1) / sqrt(fan_in)``
where ``fan_in`` is the input width of the layer the tensor belongs to.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Classifier, SchemaError, _frozen

log = logging.getLogger(__name__)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of SplitMix64 started at ``seed``, as uint64."""
    seed = np.uint64(seed % 2**64)
    idx = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = seed + idx * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def splitmix64_uniform(seed: int, n: int) -> np.ndarray:
    return (splitmix64(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _rowmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` computed row by row, so a window's result does not depend on
    what else is in the batch (BLAS picks different kernels per batch size)."""
    return np.einsum("...i,ij->...j", a, b)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_class_grad(p: np.ndarray, c: int) -> np.ndarray:
    """d p_c / d logits for a batch of probability rows."""
    g = -p[:, c:c + 1] * p
    g[:, c] += p[:, c]
    return g


class _ParamModel(Classifier):
    KIND = ""
    PARAM_ORDER: tuple[str, ...] = ()

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: getattr(self, name).shape for name in self.PARAM_ORDER}

    def flat_params(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name in self.PARAM_ORDER])

    def shape_info(self) -> dict:
        raise NotImplementedError

    def with_flat_params(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=float)
        kwargs, pos = {}, 0
        for name, shape in self.param_shapes().items():
            size = int(np.prod(shape))
            kwargs[name] = flat[pos:pos + size].reshape(shape)
            pos += size
        if pos != flat.size:
            raise ValueError(f"expected {pos} parameters, got {flat.size}")
        return self._rebuild(**kwargs)

    def _rebuild(self, **params):
        raise NotImplementedError

    def loss_and_grads(self, windows: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean cross-entropy and its gradient w.r.t. the flat parameters."""
        raise NotImplementedError

    def to_checkpoint(self, seed: int | None = None) -> dict:
        return {
            "kind": self.KIND,
            "shape": self.shape_info(),
            "params": self.flat_params().tolist(),
            "seed": seed,
        }


@dataclass(frozen=True, eq=False)
class AffineScorer(_ParamModel):
    """``logits = sum_{t,d} x[t,d] * weights[t,d,:] + bias``.

    With ``link="identity"`` the scores are returned as-is. That output is not
    a probability vector; the model exists as an exact oracle for path
    integrals, since its gradient does not depend on the input.
    """

    weights: np.ndarray
    bias: np.ndarray
    link: str = "softmax"

    KIND = "affine"
    PARAM_ORDER = ("weights", "bias")

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 3:
            raise ValueError(f"weights must be W x D x C, got {w.shape}")
        b = _frozen(self.bias)
        if b.shape != (w.shape[2],):
            raise ValueError(f"bias must have length {w.shape[2]}")
        if self.link not in ("softmax", "identity"):
            raise ValueError(f"unknown link {self.link!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "window_size", w.shape[0])
        object.__setattr__(self, "num_features", w.shape[1])
        object.__setattr__(self, "num_classes", w.shape[2])
        object.__setattr__(self, "probabilistic", self.link == "softmax")

    @classmethod
    def init(cls, window_size: int, num_features: int, num_classes: int, seed: int, link: str = "softmax"):
        n_w = window_size * num_features * num_classes
        u = splitmix64_uniform(seed, n_w + num_classes)
        bound = 1.0 / np.sqrt(window_size * num_features)
        flat = (2.0 * u - 1.0) * bound
        return cls(flat[:n_w].reshape(window_size, num_features, num_classes), flat[n_w:], link)

    def shape_info(self):
        return {"window": self.window_size, "features": self.num_features,
                "classes": self.num_classes, "link": self.link}

    def _rebuild(self, **params):
        return AffineScorer(params["weights"], params["bias"], self.link)

    def _scores(self, windows):
        return np.einsum("ntd,tdc->nc", windows, self.weights) + self.bias

    def predict_batch(self, windows):
        s = self._scores(self._check_batch(windows))
        return _softmax(s) if self.link == "softmax" else s

    def grad_batch(self, windows, target_class):
        windows = self._check_batch(windows)
        c = self._check_class(target_class)
        if self.link == "identity":
            return np.broadcast_to(self.weights[:, :, c], windows.shape).copy()
        p = _softmax(self._scores(windows))
        return np.einsum("nk,tdk->ntd", _softmax_class_grad(p, c), self.weights)

    def loss_and_grads(self, windows, labels):
        if self.link != "softmax":
            raise ValueError("identity-link AffineScorer is an oracle model and cannot be trained")
        windows = self._check_batch(windows)
        n = windows.shape[0]
        p = _softmax(self._scores(windows))
        loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
        dlog = p.copy()
        dlog[np.arange(n), labels] -= 1.0
        dlog /= n
        gw = np.einsum("ntd,nc->tdc", windows, dlog)
        return float(loss), np.concatenate([gw.ravel(), dlog.sum(0)])


@dataclass(frozen=True, eq=False)
class WindowMLP(_ParamModel):
    """One tanh hidden layer on the flattened window, softmax output."""

    in_w: np.ndarray   # (W*D, H)
    in_b: np.ndarray   # (H,)
    out_w: np.ndarray  # (H, C)
    out_b: np.ndarray  # (C,)
    window_size: int = 0
    num_features: int = 0

    KIND = "mlp"
    PARAM_ORDER = ("in_w", "in_b", "out_w", "out_b")

    def __post_init__(self):
        for name in self.PARAM_ORDER:
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.in_w.shape[0] != self.window_size * self.num_features:
            raise ValueError(
                f"in_w has {self.in_w.shape[0]} rows, expected W*D = "
                f"{self.window_size * self.num_features}"
            )
        H, C = self.out_w.shape
        if self.in_w.shape[1] != H or self.in_b.shape != (H,) or self.out_b.shape != (C,):
            raise ValueError("inconsistent WindowMLP parameter shapes")
        object.__setattr__(self, "num_classes", C)

    @property
    def hidden_width(self) -> int:
        return self.in_b.shape[0]

    @classmethod
    def init(cls, window_size, num_features, hidden, num_classes, seed):
        fan_in = window_size * num_features
        sizes = [fan_in * hidden, hidden, hidden * num_classes, num_classes]
        bounds = [fan_in, fan_in, hidden, hidden]
        u = splitmix64_uniform(seed, sum(sizes))
        scale = np.concatenate([np.full(s, 1.0 / np.sqrt(b)) for s, b in zip(sizes, bounds)])
        flat = (2.0 * u - 1.0) * scale
        proto = cls(np.zeros((fan_in, hidden)), np.zeros(hidden), np.zeros((hidden, num_classes)),
                    np.zeros(num_classes), window_size, num_features)
        return proto.with_flat_params(flat)

    def shape_info(self):
        return {"window": self.window_size, "features": self.num_features,
                "hidden": self.hidden_width, "classes": self.num_classes}

    def _rebuild(self, **params):
        return WindowMLP(**params, window_size=self.window_size, num_features=self.num_features)

    def _forward(self, windows):
        x = windows.reshape(windows.shape[0], -1)
        h = np.tanh(_rowmm(x, self.in_w) + self.in_b)
        return x, h, _softmax(_rowmm(h, self.out_w) + self.out_b)

    def predict_batch(self, windows):
        return self._forward(self._check_batch(windows))[2]

    def grad_batch(self, windows, target_class):
        windows = self._check_batch(windows)
        c = self._check_class(target_class)
        _, h, p = self._forward(windows)
        dh = _rowmm(_softmax_class_grad(p, c), self.out_w.T)
        dx = _rowmm(dh * (1.0 - h * h), self.in_w.T)
        return dx.reshape(windows.shape)

    def loss_and_grads(self, windows, labels):
        windows = self._check_batch(windows)
        n = windows.shape[0]
        x, h, p = self._forward(windows)
        loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
        dlog = p.copy()
        dlog[np.arange(n), labels] -= 1.0
        dlog /= n
        da = (dlog @ self.out_w.T) * (1.0 - h * h)
        grads = [x.T @ da, da.sum(0), h.T @ dlog, dlog.sum(0)]
        return float(loss), np.concatenate([g.ravel() for g in grads])


def permute_hidden_units(model: WindowMLP, permutation: Sequence[int]) -> WindowMLP:
    """Reorder hidden units; the returned model computes the same function."""
    perm = np.asarray(permutation)
    H = model.hidden_width
    if perm.shape != (H,) or not np.array_equal(np.sort(perm), np.arange(H)):
        raise ValueError(f"permutation must be a bijection on 0..{H - 1}")
    return WindowMLP(model.in_w[:, perm], model.in_b[perm], model.out_w[perm], model.out_b,
                     model.window_size, model.num_features)


@dataclass(frozen=True, eq=False)
class RecurrentClassifier(_ParamModel):
    """Elman cell ``h_t = tanh(x_t U + h_{t-1} V + b)`` read out from the last state.

    Input gradients use full backpropagation through the window.
    """

    in_w: np.ndarray   # U, (D, H)
    rec_w: np.ndarray  # V, (H, H)
    state_b: np.ndarray
    out_w: np.ndarray  # (H, C)
    out_b: np.ndarray
    window_size: int = 0

    KIND = "rnn"
    PARAM_ORDER = ("in_w", "rec_w", "state_b", "out_w", "out_b")

    def __post_init__(self):
        for name in self.PARAM_ORDER:
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        D, H = self.in_w.shape
        if self.rec_w.shape != (H, H) or self.state_b.shape != (H,) or self.out_w.shape[0] != H:
            raise ValueError("inconsistent RecurrentClassifier parameter shapes")
        if self.out_b.shape != (self.out_w.shape[1],):
            raise ValueError("out_b must match the number of classes")
        if self.window_size < 1:
            raise ValueError("window_size must be positive")
        object.__setattr__(self, "num_features", D)
        object.__setattr__(self, "num_classes", self.out_w.shape[1])

    @property
    def state_width(self) -> int:
        return self.state_b.shape[0]

    @classmethod
    def init(cls, window_size, num_features, hidden, num_classes, seed):
        D, H, C = num_features, hidden, num_classes
        sizes = [D * H, H * H, H, H * C, C]
        fan = [D + H, D + H, D + H, H, H]
        u = splitmix64_uniform(seed, sum(sizes))
        scale = np.concatenate([np.full(s, 1.0 / np.sqrt(b)) for s, b in zip(sizes, fan)])
        flat = (2.0 * u - 1.0) * scale
        proto = cls(np.zeros((D, H)), np.zeros((H, H)), np.zeros(H), np.zeros((H, C)),
                    np.zeros(C), window_size)
        return proto.with_flat_params(flat)

    def shape_info(self):
        return {"window": self.window_size, "features": self.num_features,
                "hidden": self.state_width, "classes": self.num_classes}

    def _rebuild(self, **params):
        return RecurrentClassifier(**params, window_size=self.window_size)

    def _forward(self, windows):
        n, W, _ = windows.shape
        hs = np.zeros((W + 1, n, self.state_width))
        proj = _rowmm(windows, self.in_w) + self.state_b  # (n, W, H)
        for t in range(W):
            hs[t + 1] = np.tanh(proj[:, t] + _rowmm(hs[t], self.rec_w))
        return hs, _softmax(_rowmm(hs[W], self.out_w) + self.out_b)

    def _backward_states(self, hs, dlast):
        """Back-propagate dL/dh_W through time; yields (t, dL/da_t) newest first."""
        dh = dlast
        for t in range(hs.shape[0] - 2, -1, -1):
            da = dh * (1.0 - hs[t + 1] ** 2)
            yield t, da
            dh = _rowmm(da, self.rec_w.T)

    def predict_batch(self, windows):
        return self._forward(self._check_batch(windows))[1]

    def grad_batch(self, windows, target_class):
        windows = self._check_batch(windows)
        c = self._check_class(target_class)
        hs, p = self._forward(windows)
        dx = np.empty_like(windows)
        for t, da in self._backward_states(hs, _rowmm(_softmax_class_grad(p, c), self.out_w.T)):
            dx[:, t] = _rowmm(da, self.in_w.T)
        return dx

    def loss_and_grads(self, windows, labels):
        windows = self._check_batch(windows)
        n = windows.shape[0]
        hs, p = self._forward(windows)
        loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
        dlog = p.copy()
        dlog[np.arange(n), labels] -= 1.0
        dlog /= n
        g_in = np.zeros_like(self.in_w)
        g_rec = np.zeros_like(self.rec_w)
        g_b = np.zeros_like(self.state_b)
        for t, da in self._backward_states(hs, dlog @ self.out_w.T):
            g_in += windows[:, t].T @ da
            g_rec += hs[t].T @ da
            g_b += da.sum(0)
        grads = [g_in, g_rec, g_b, hs[-1].T @ dlog, dlog.sum(0)]
        return float(loss), np.concatenate([g.ravel() for g in grads])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    l2: float = 0.0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


class TrainingError(RuntimeError):
    pass


def _dataset_arrays(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        windows, labels = dataset
    else:
        if len(dataset) == 0:
            raise ValueError("cannot train on an empty dataset")
        windows = np.stack([np.asarray(w, dtype=float) for w, _ in dataset])
        labels = np.array([int(y) for _, y in dataset])
    windows = np.asarray(windows, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if windows.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    return windows, labels


def train_sgd(model: _ParamModel, dataset, cfg: TrainConfig):
    """Minibatch SGD on mean cross-entropy.

    ``dataset`` is a list of ``(window, label)`` pairs or a ``(windows,
    labels)`` array tuple. Minibatch order per epoch is a permutation drawn
    from ``numpy.random.default_rng(cfg.seed)``. Returns the trained model and
    the full-dataset loss before training and after each epoch.
    """
    windows, labels = _dataset_arrays(dataset)
    model._check_batch(windows)
    n = windows.shape[0]
    rng = np.random.default_rng(cfg.seed)
    theta = model.flat_params().copy()
    decay_mask = _weight_mask(model)
    trace = [model.loss_and_grads(windows, labels)[0]]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g = model.loss_and_grads(windows[idx], labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch offset {start}")
            if cfg.l2:
                g = g + cfg.l2 * theta * decay_mask
            if cfg.clip_norm is not None:
                norm = np.linalg.norm(g)
                if norm > cfg.clip_norm:
                    g = g * (cfg.clip_norm / norm)
            theta = theta - cfg.learning_rate * g
            model = model.with_flat_params(theta)
        epoch_loss = model.loss_and_grads(windows, labels)[0]
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"non-finite training loss after epoch {epoch}")
        trace.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
    return model, trace


def _weight_mask(model: _ParamModel) -> np.ndarray:
    parts = []
    for name, shape in model.param_shapes().items():
        parts.append(np.full(int(np.prod(shape)), 0.0 if len(shape) == 1 else 1.0))
    return np.concatenate(parts)


def accuracy(model: Classifier, windows: np.ndarray, labels: np.ndarray) -> float:
    pred = np.argmax(model.predict_batch(windows), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_KINDS = {"affine": AffineScorer, "mlp": WindowMLP, "rnn": RecurrentClassifier}


def model_from_checkpoint(obj: dict) -> _ParamModel:
    try:
        kind, shape, params = obj["kind"], obj["shape"], obj["params"]
    except KeyError as exc:
        raise SchemaError(f"checkpoint missing field {exc}") from None
    if kind not in _KINDS:
        raise SchemaError(f"unknown model kind {kind!r}")
    try:
        W, D, C = shape["window"], shape["features"], shape["classes"]
        if kind == "affine":
            proto = AffineScorer(np.zeros((W, D, C)), np.zeros(C), shape.get("link", "softmax"))
        elif kind == "mlp":
            H = shape["hidden"]
            proto = WindowMLP(np.zeros((W * D, H)), np.zeros(H), np.zeros((H, C)), np.zeros(C), W, D)
        else:
            H = shape["hidden"]
            proto = RecurrentClassifier(np.zeros((D, H)), np.zeros((H, H)), np.zeros(H),
                                        np.zeros((H, C)), np.zeros(C), W)
        return proto.with_flat_params(np.asarray(params, dtype=float))
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"checkpoint shape mismatch: {exc}") from None


def save_model(path, model: _ParamModel, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_checkpoint(seed), fh)


def load_model(path) -> _ParamModel:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from None
    return model_from_checkpoint(obj)
