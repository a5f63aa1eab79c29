"""Squeeze-and-excitation gated two-layer network in plain numpy.

Per input row ``x``::

    g  = sigmoid(W_se2 · relu(W_se1 · x + b_se1) + b_se2)
    x' = dropout_0.2(x * g)
    h  = dropout_0.5(relu(batchnorm(W1 · x' + b1)))
    p  = softmax(W2 · h + b2)

There is no spatial axis, so the SE "squeeze" is the identity and the gate
acts directly on the feature vector. Training uses mean cross-entropy and
Adam; the returned model is the snapshot with the best validation MCC.
"""
from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import metrics
from .errors import (
    BatchTooSmall,
    ConfigError,
    DataError,
    DimensionMismatch,
    DivergedLoss,
    FormatError,
    NonFiniteActivation,
    StaleCache,
)

log = logging.getLogger(__name__)

MAGIC = b"SEMLP1"
PARAM_ORDER = (
    "se1_w", "se1_b", "se2_w", "se2_b",
    "fc1_w", "fc1_b", "bn_gamma", "bn_beta",
    "fc2_w", "fc2_b",
)
BUFFER_ORDER = ("bn_running_mean", "bn_running_var")


@dataclass(frozen=True)
class ClassifierConfig:
    input_dim: int
    n_classes: int = 3
    hidden_dim: int = 128
    se_reduction: int = 16
    dropout_se: float = 0.2
    dropout_hidden: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("input_dim and hidden_dim must be positive")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        if not 1 <= self.se_reduction <= self.input_dim:
            raise ConfigError(f"se_reduction must be in [1, input_dim={self.input_dim}]")
        for name in ("dropout_se", "dropout_hidden"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ConfigError("bn_momentum must be in (0, 1]")
        if self.batch_size < 2 or self.epochs < 1 or self.learning_rate <= 0:
            raise ConfigError("batch_size >= 2, epochs >= 1 and learning_rate > 0 required")

    @property
    def se_dim(self):
        return self.input_dim // self.se_reduction

    def shapes(self):
        d, s, h, c = self.input_dim, self.se_dim, self.hidden_dim, self.n_classes
        return {
            "se1_w": (s, d), "se1_b": (s,), "se2_w": (d, s), "se2_b": (d,),
            "fc1_w": (h, d), "fc1_b": (h,), "bn_gamma": (h,), "bn_beta": (h,),
            "fc2_w": (c, h), "fc2_b": (c,),
            "bn_running_mean": (h,), "bn_running_var": (h,),
        }

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown classifier config keys: {sorted(unknown)}")
        return cls(**d)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check(name, arr):
    if not np.isfinite(arr).all():
        raise NonFiniteActivation(name)


class SEMLP:
    """Parameters, batch-norm buffers and forward/backward passes."""

    def __init__(self, config: ClassifierConfig, rng=None):
        self.config = config
        self.version = 0
        self.training = False
        shapes = config.shapes()
        if rng is None:
            rng = np.random.default_rng(config.seed)
        self.params = {}
        for name in PARAM_ORDER:
            shape = shapes[name]
            if name.endswith("_w"):
                bound = 1.0 / np.sqrt(shape[1])
                self.params[name] = rng.uniform(-bound, bound, size=shape)
            elif name == "bn_gamma":
                self.params[name] = np.ones(shape)
            else:
                self.params[name] = np.zeros(shape)
        self.buffers = {
            "bn_running_mean": np.zeros(shapes["bn_running_mean"]),
            "bn_running_var": np.ones(shapes["bn_running_var"]),
        }

    def train_mode(self):
        self.training = True
        return self

    def eval_mode(self):
        self.training = False
        return self

    def _validate_input(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.config.input_dim:
            raise DimensionMismatch(
                f"expected input of shape [B, {self.config.input_dim}], got {X.shape}"
            )
        if not np.isfinite(X).all():
            raise NonFiniteActivation("input")
        return X

    def forward(self, X, rng=None):
        """Return class probabilities, plus a cache when in training mode.

        In training mode batch statistics are used (and the running
        statistics updated) and dropout masks are drawn from ``rng``.
        """
        X = self._validate_input(X)
        P = self.params
        cfg = self.config
        train = self.training
        if train and X.shape[0] < 2:
            raise BatchTooSmall(f"training batch needs at least 2 rows, got {X.shape[0]}")

        z1 = X @ P["se1_w"].T + P["se1_b"]
        a1 = np.maximum(z1, 0.0)
        gate = _sigmoid(a1 @ P["se2_w"].T + P["se2_b"])
        _check("se_gate", gate)
        xs = X * gate
        mask1 = self._dropout_mask(xs.shape, cfg.dropout_se, rng) if train else None
        xd = xs * mask1 if mask1 is not None else xs

        u = xd @ P["fc1_w"].T + P["fc1_b"]
        _check("fc1", u)
        if train:
            mu = u.mean(axis=0)
            var = u.var(axis=0)
            m = cfg.bn_momentum
            self.buffers["bn_running_mean"] = (1 - m) * self.buffers["bn_running_mean"] + m * mu
            self.buffers["bn_running_var"] = (1 - m) * self.buffers["bn_running_var"] + m * var
        else:
            mu = self.buffers["bn_running_mean"]
            var = self.buffers["bn_running_var"]
        inv_std = 1.0 / np.sqrt(var + cfg.bn_eps)
        xhat = (u - mu) * inv_std
        v = P["bn_gamma"] * xhat + P["bn_beta"]
        _check("batchnorm", v)
        h = np.maximum(v, 0.0)
        mask2 = self._dropout_mask(h.shape, cfg.dropout_hidden, rng) if train else None
        hd = h * mask2 if mask2 is not None else h

        logits = hd @ P["fc2_w"].T + P["fc2_b"]
        _check("logits", logits)
        probs = softmax(logits)
        if not train:
            return probs, None
        cache = dict(
            version=self.version, X=X, z1=z1, a1=a1, gate=gate, mask1=mask1, xd=xd,
            xhat=xhat, inv_std=inv_std, v=v, mask2=mask2, hd=hd, probs=probs,
        )
        return probs, cache

    @staticmethod
    def _dropout_mask(shape, rate, rng):
        if rate == 0.0:
            return None
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        keep = 1.0 - rate
        return (rng.random(shape) < keep) / keep

    def predict_proba(self, X):
        was = self.training
        self.training = False
        try:
            return self.forward(X)[0]
        finally:
            self.training = was

    def backward(self, cache, y):
        """Gradients of the mean cross-entropy w.r.t. every parameter."""
        if cache is None or cache["version"] != self.version:
            raise StaleCache("cache was produced by a different parameter version")
        P = self.params
        y = np.asarray(y, dtype=np.int64)
        B = y.shape[0]
        g = {}

        dlogits = cache["probs"].copy()
        dlogits[np.arange(B), y] -= 1.0
        dlogits /= B
        g["fc2_w"] = dlogits.T @ cache["hd"]
        g["fc2_b"] = dlogits.sum(axis=0)

        dh = dlogits @ P["fc2_w"]
        if cache["mask2"] is not None:
            dh = dh * cache["mask2"]
        dv = dh * (cache["v"] > 0)
        xhat = cache["xhat"]
        g["bn_gamma"] = (dv * xhat).sum(axis=0)
        g["bn_beta"] = dv.sum(axis=0)
        dxhat = dv * P["bn_gamma"]
        du = cache["inv_std"] / B * (
            B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )
        g["fc1_w"] = du.T @ cache["xd"]
        g["fc1_b"] = du.sum(axis=0)

        dxs = du @ P["fc1_w"]
        if cache["mask1"] is not None:
            dxs = dxs * cache["mask1"]
        gate = cache["gate"]
        dz2 = dxs * cache["X"] * gate * (1.0 - gate)
        g["se2_w"] = dz2.T @ cache["a1"]
        g["se2_b"] = dz2.sum(axis=0)
        dz1 = (dz2 @ P["se2_w"]) * (cache["z1"] > 0)
        g["se1_w"] = dz1.T @ cache["X"]
        g["se1_b"] = dz1.sum(axis=0)
        return g

    # serialization

    def to_bytes(self) -> bytes:
        cfg = json.dumps(asdict(self.config), sort_keys=True).encode("utf-8")
        parts = [MAGIC, struct.pack("<I", len(cfg)), cfg]
        for name in PARAM_ORDER:
            parts.append(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        for name in BUFFER_ORDER:
            parts.append(np.ascontiguousarray(self.buffers[name], dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SEMLP":
        if data[: len(MAGIC)] != MAGIC:
            raise FormatError("bad magic bytes, not an SEMLP1 checkpoint")
        off = len(MAGIC)
        if len(data) < off + 4:
            raise FormatError("checkpoint truncated in config block")
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        try:
            config = ClassifierConfig.from_dict(json.loads(data[off : off + n].decode("utf-8")))
        except (ValueError, TypeError) as exc:
            raise FormatError(f"bad checkpoint config block: {exc}") from None
        off += n
        model = cls.__new__(cls)
        model.config = config
        model.version = 0
        model.training = False
        model.params, model.buffers = {}, {}
        shapes = config.shapes()
        for name in PARAM_ORDER + BUFFER_ORDER:
            size = int(np.prod(shapes[name]))
            if len(data) < off + 8 * size:
                raise FormatError(f"checkpoint truncated in {name}")
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).astype(np.float64)
            target = model.params if name in PARAM_ORDER else model.buffers
            target[name] = arr.reshape(shapes[name])
            off += 8 * size
        if off != len(data):
            raise FormatError(f"{len(data) - off} trailing bytes after checkpoint")
        return model

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SEMLP":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def cross_entropy(probs, y):
    y = np.asarray(y, dtype=np.int64)
    picked = probs[np.arange(y.shape[0]), y]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, model: SEMLP, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, grad in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(grad)
                self.v[name] = np.zeros_like(grad)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            model.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        model.version += 1


def _batches(order, batch_size):
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    # a single leftover row cannot feed batch norm
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def score(model: SEMLP, X, y):
    probs = model.predict_proba(X)
    pred = probs.argmax(axis=1)
    cm = metrics.confusion(y, pred, model.config.n_classes)
    return cross_entropy(probs, y), metrics.accuracy(cm), metrics.mcc(cm)


def train(config: ClassifierConfig, X_train, y_train, X_val=None, y_val=None):
    """Train an SEMLP; returns ``(model, history)``.

    ``history`` holds one dict per epoch with the training loss and the
    validation loss/accuracy/MCC. The model returned is the epoch snapshot
    with the best validation MCC (earliest on ties), or the final one when
    no validation data is given.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if X_train.shape[0] != y_train.shape[0]:
        raise DimensionMismatch("X_train and y_train lengths differ")
    if X_train.shape[0] < 2:
        raise BatchTooSmall("need at least 2 training samples")
    if y_train.min() < 0 or y_train.max() >= config.n_classes:
        raise DataError("training labels out of range")
    counts = np.bincount(y_train, minlength=config.n_classes)
    if (counts == 0).any():
        raise DataError(f"classes {np.flatnonzero(counts == 0).tolist()} absent from training split")
    has_val = X_val is not None and len(X_val) > 0

    init_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(config.seed).spawn(3)
    model = SEMLP(config, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    history = []
    best_state, best_mcc = None, -np.inf
    for epoch in range(1, config.epochs + 1):
        model.train_mode()
        total = 0.0
        for idx in _batches(shuffle_rng.permutation(X_train.shape[0]), config.batch_size):
            try:
                probs, cache = model.forward(X_train[idx], rng=dropout_rng)
            except NonFiniteActivation as exc:
                raise DivergedLoss(epoch, f"epoch {epoch}: {exc}") from exc
            total += cross_entropy(probs, y_train[idx]) * len(idx)
            opt.step(model, model.backward(cache, y_train[idx]))
        loss = total / X_train.shape[0]
        if not np.isfinite(loss):
            raise DivergedLoss(epoch)
        model.eval_mode()
        row = {"epoch": epoch, "loss": loss}
        if has_val:
            row["val_loss"], row["val_accuracy"], row["val_mcc"] = score(model, X_val, y_val)
            if row["val_mcc"] > best_mcc:
                best_mcc = row["val_mcc"]
                best_state = _snapshot(model)
                row["best"] = True
        history.append(row)
        log.debug("epoch %d: %s", epoch, row)

    if best_state is not None:
        model.params, model.buffers = best_state
    model.eval_mode()
    model.version += 1
    return model, history


def _snapshot(model):
    return copy.deepcopy(model.params), copy.deepcopy(model.buffers)
