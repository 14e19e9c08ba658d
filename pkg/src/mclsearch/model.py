"""The multilinear compressive learning system.

A model chains three parts: a sensing operator (one ``M_k x I_k`` factor
per mode), a synthesis operator (one ``I_k^max x M_k`` factor per mode, so
synthesized features always have the maximum feasible resolution) and a
fixed-architecture task head.
"""

import logging
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .head import TaskHead, cross_entropy, head_backward, head_forward, softmax
from .optim import AdamState, DivergenceError, adam_step, lr_at
from .tensor import _apply_axis, downsample, leading_eigvecs, multilinear_map

log = logging.getLogger(__name__)

__all__ = [
    "ConfigPoint",
    "SensingOperator",
    "SynthesisOperator",
    "MclModel",
    "Evaluation",
    "sense",
    "synthesize",
    "forward",
    "init_hosvd",
    "init_gaussian",
    "init_reconstruction",
    "init_task_head",
    "train_joint",
    "evaluate",
    "reconstruction_mse",
    "reconstruction_loss",
    "classification_loss",
    "save_model",
    "load_model",
]


def _dims(x):
    return tuple(int(d) for d in x)


def _fmt(dims):
    return "x".join(str(d) for d in dims)


@dataclass(frozen=True, order=True)
class ConfigPoint:
    """A sensor configuration: sampling resolution ``I`` and measurement shape ``M``."""

    I: tuple
    M: tuple

    def __post_init__(self):
        object.__setattr__(self, "I", _dims(self.I))
        object.__setattr__(self, "M", _dims(self.M))
        if len(self.I) != len(self.M) or not self.I:
            raise ValueError("I and M must have the same, nonzero number of modes")
        if min(self.I + self.M) < 1:
            raise ValueError("all extents must be positive")

    @property
    def order(self):
        return len(self.I)

    def label(self):
        return f"{_fmt(self.I)}/{_fmt(self.M)}"


@dataclass
class SensingOperator:
    factors: list

    @property
    def out_shape(self):
        return tuple(f.shape[0] for f in self.factors)

    @property
    def in_shape(self):
        return tuple(f.shape[1] for f in self.factors)


@dataclass
class SynthesisOperator:
    factors: list

    @property
    def out_shape(self):
        return tuple(f.shape[0] for f in self.factors)

    @property
    def in_shape(self):
        return tuple(f.shape[1] for f in self.factors)


@dataclass
class MclModel:
    cs: SensingOperator
    fs: SynthesisOperator
    head: TaskHead
    config: ConfigPoint

    def __post_init__(self):
        if self.cs.in_shape != self.config.I or self.cs.out_shape != self.config.M:
            raise ValueError("sensing factors do not match the configuration")
        if self.fs.in_shape != self.config.M:
            raise ValueError("synthesis factors do not match the measurement shape")

    @property
    def i_max(self):
        return self.fs.out_shape

    def params(self):
        return list(self.cs.factors) + list(self.fs.factors) + list(self.head.params)

    @classmethod
    def from_params(cls, params, config, class_count):
        k = config.order
        return cls(
            SensingOperator(list(params[:k])),
            SynthesisOperator(list(params[k:2 * k])),
            TaskHead(list(params[2 * k:]), class_count),
            config,
        )

    def copy(self):
        return MclModel.from_params([p.copy() for p in self.params()], self.config, self.head.class_count)


class Evaluation(NamedTuple):
    accuracy: float
    ce: float
    mse: float


# -- batched multilinear maps -------------------------------------------------


def _bmap(x, factors):
    # x: (B, d_1, ..., d_K); factor k applied to axis k + 1
    for ax, a in enumerate(factors):
        x = _apply_axis(x, a, ax + 1)
    return x


def _bmap_backward(x, factors, g):
    """Gradients of ``<g, _bmap(x, factors)>`` with respect to ``x`` and each factor."""
    K = len(factors)
    gx = _bmap(g, [a.T for a in factors])
    gfactors = []
    for k in range(K):
        w = x
        for j, a in enumerate(factors):
            if j != k:
                w = _apply_axis(w, a, j + 1)
        axes = [0] + [j + 1 for j in range(K) if j != k]
        gfactors.append(np.tensordot(g, w, axes=(axes, axes)))
    return gx, gfactors


def _check_shape(got, want, what):
    if tuple(got) != tuple(want):
        raise ValueError(f"{what} shape {tuple(got)} does not match expected {tuple(want)}")


def sense(m, y):
    """Compressed measurements ``y x_1 Phi_1 ... x_K Phi_K``."""
    y = np.asarray(y, dtype=np.float64)
    _check_shape(y.shape, m.config.I, "input")
    return multilinear_map(y, m.cs.factors)


def synthesize(m, z):
    """Features ``z x_1 Theta_1 ... x_K Theta_K`` at the maximum resolution."""
    z = np.asarray(z, dtype=np.float64)
    _check_shape(z.shape, m.config.M, "measurement")
    return multilinear_map(z, m.fs.factors)


def forward(m, y):
    """Class scores for a single sample at the model's sampling resolution."""
    t = synthesize(m, sense(m, y))
    logits, _ = head_forward(m.head.params, t[None])
    return logits[0]


def _predict(params, k, x, batch=256):
    out = []
    for s in range(0, len(x), batch):
        xb = x[s:s + batch]
        t = _bmap(_bmap(xb, params[:k]), params[k:2 * k])
        out.append(head_forward(params[2 * k:], t)[0])
    return np.concatenate(out) if out else np.zeros((0, params[-1].shape[0]))


# -- objectives ---------------------------------------------------------------


def reconstruction_loss(phi, theta, x, y, with_grad=True):
    """Mean squared error between synthesized features and full-resolution targets.

    Returns ``loss`` or ``(loss, phi_grads, theta_grads)``.
    """
    z = _bmap(x, phi)
    t = _bmap(z, theta)
    r = t - y
    loss = float(np.mean(r * r))
    if not with_grad:
        return loss
    g = (2.0 / r.size) * r
    gz, gtheta = _bmap_backward(z, theta, g)
    _, gphi = _bmap_backward(x, phi, gz)
    return loss, gphi, gtheta


def classification_loss(params, k, x, labels, with_grad=True):
    """Mean cross-entropy of the full pipeline; ``params`` = Phi, Theta, head."""
    phi, theta, hp = params[:k], params[k:2 * k], params[2 * k:]
    z = _bmap(x, phi)
    t = _bmap(z, theta)
    logits, cache = head_forward(hp, t)
    loss, glogits = cross_entropy(logits, labels)
    if not with_grad:
        return loss
    ghead, gt = head_backward(hp, cache, glogits)
    gz, gtheta = _bmap_backward(z, theta, gt)
    _, gphi = _bmap_backward(x, phi, gz)
    return loss, gphi + gtheta + ghead


def reconstruction_mse(cs, fs, x, y):
    """Per-element MSE of ``fs(cs(x))`` against ``y`` over a batch."""
    total, count = 0.0, 0
    for s in range(0, len(x), 256):
        r = _bmap(_bmap(x[s:s + 256], cs.factors), fs.factors) - y[s:s + 256]
        total += float(np.sum(r * r))
        count += r.size
    if count == 0:
        raise ValueError("empty batch")
    return total / count


# -- training loop --------------------------------------------------------------


def _fit(params, n, loss_grad, opt, on_epoch=None, what="training"):
    """Mini-batch Adam over ``n`` samples following ``opt``'s schedule."""
    rng = np.random.default_rng([opt.seed, 0x5EED])
    state = AdamState.for_params(params)
    for epoch in range(1, opt.epochs + 1):
        lr = lr_at(opt, epoch)
        order = rng.permutation(n)
        for s in range(0, n, opt.batch_size):
            idx = np.sort(order[s:s + opt.batch_size])
            loss, grads = loss_grad(params, idx)
            if not np.isfinite(loss):
                raise DivergenceError(f"{what} diverged at epoch {epoch}", epoch)
            try:
                params = adam_step(state, params, grads, lr, opt)
            except DivergenceError as exc:
                raise DivergenceError(f"{what} diverged at epoch {epoch}: {exc}", epoch) from None
        if on_epoch is not None:
            on_epoch(epoch, params)
    return params


def _train_arrays(ds, split="train"):
    if ds.split is None:
        return ds.samples, ds.labels
    x, c = ds.subset(split)
    return x, c


def init_hosvd(trainset, config):
    """Dataset-level HOSVD initialization at the maximum resolution.

    Factor ``k`` holds the leading ``M_k`` eigenvectors (as rows) of the
    mode-k scatter matrix summed over training samples. Sensing uses the
    factors directly and synthesis their transposes.
    """
    y, _ = _train_arrays(trainset)
    if len(y) == 0:
        raise ValueError("empty training set")
    _check_shape(config.I, trainset.shape, "HOSVD initialization needs I = I^max; resolution")
    factors = []
    for k, (m, i) in enumerate(zip(config.M, config.I), start=1):
        if m > i:
            raise ValueError(f"M_{k}={m} exceeds I_{k}={i}")
        # unfold the whole batch along mode k: columns run over samples and other modes
        u = np.moveaxis(y, k, 0).reshape(i, -1)
        factors.append(leading_eigvecs(u @ u.T, m))
    return SensingOperator(factors), SynthesisOperator([f.T.copy() for f in factors])


def init_gaussian(config, i_max, seed):
    """Gaussian factors scaled by ``1/sqrt(fan_in)``."""
    rng = np.random.default_rng([seed, 0xC5])
    phi = [rng.standard_normal((m, i)) / np.sqrt(i) for m, i in zip(config.M, config.I)]
    theta = [rng.standard_normal((t, m)) / np.sqrt(m) for t, m in zip(i_max, config.M)]
    return SensingOperator(phi), SynthesisOperator(theta)


def init_reconstruction(trainset, config, opt, start=None):
    """Fit sensing and synthesis factors to reconstruct full-resolution samples
    from their down-sampled versions.

    Starts from the dataset HOSVD when ``config.I`` is the maximum resolution
    and from scaled Gaussian factors otherwise, unless ``start`` is given.

    Returns
    -------
    cs, fs, history
        The fitted operators and the training MSE after each epoch.
    """
    y, _ = _train_arrays(trainset)
    if len(y) == 0:
        raise ValueError("empty training set")
    i_max = trainset.shape
    if len(config.I) != len(i_max):
        raise ValueError("configuration order differs from the dataset")
    x = downsample(y, config.I, batch=True)
    if start is not None:
        cs, fs = start
    elif config.I == i_max and all(m <= i for m, i in zip(config.M, config.I)):
        cs, fs = init_hosvd(trainset, config)
    else:
        cs, fs = init_gaussian(config, i_max, opt.seed)
    k = config.order
    history = []

    def loss_grad(params, idx):
        loss, gphi, gtheta = reconstruction_loss(params[:k], params[k:], x[idx], y[idx])
        return loss, gphi + gtheta

    def on_epoch(epoch, params):
        mse = reconstruction_mse(SensingOperator(params[:k]), SynthesisOperator(params[k:]), x, y)
        if not np.isfinite(mse):
            raise DivergenceError(f"reconstruction diverged at epoch {epoch}", epoch)
        history.append(mse)
        log.debug("init %s epoch %d mse %.6g", config.label(), epoch, mse)

    params = _fit(list(cs.factors) + list(fs.factors), len(y), loss_grad, opt, on_epoch,
                  what=f"reconstruction init for {config.label()}")
    return SensingOperator(params[:k]), SynthesisOperator(params[k:]), history


def init_task_head(trainset, opt, widths=(8, 16)):
    """Train the task head alone on full-resolution training samples."""
    y, c = _train_arrays(trainset)
    if trainset.class_count < 2:
        raise ValueError("class_count must be at least 2")
    if len(y) == 0:
        raise ValueError("empty training set")
    in_ch = y.shape[3] if y.ndim == 4 else 1
    head = TaskHead.create(in_ch, trainset.class_count, widths, seed=opt.seed)

    def loss_grad(params, idx):
        logits, cache = head_forward(params, y[idx])
        loss, gl = cross_entropy(logits, c[idx])
        grads, _ = head_backward(params, cache, gl)
        return loss, grads

    params = _fit(head.params, len(y), loss_grad, opt, what="task-head init")
    return TaskHead(params, trainset.class_count)


def _accuracy(params, k, x, labels):
    if len(x) == 0:
        return 0.0
    logits = _predict(params, k, x)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train_joint(m, trainset, opt):
    """Optimize all sensing, synthesis and head parameters for classification.

    Validation accuracy is measured before training and after every epoch;
    the parameters with the best validation accuracy (earliest on ties) are
    returned.
    """
    if opt.epochs == 0:
        return m
    k = m.config.order
    ds_x = downsample(trainset.samples, m.config.I, batch=True)
    if trainset.split is None:
        tr_idx = np.arange(len(trainset))
        va_idx = tr_idx
    else:
        tr_idx, va_idx = trainset.split.train, trainset.split.val
    x, c = ds_x[tr_idx], trainset.labels[tr_idx]
    xv, cv = ds_x[va_idx], trainset.labels[va_idx]
    best = {"acc": _accuracy(m.params(), k, xv, cv), "params": m.params(), "epoch": 0}

    def loss_grad(params, idx):
        return classification_loss(params, k, x[idx], c[idx])

    def on_epoch(epoch, params):
        acc = _accuracy(params, k, xv, cv)
        log.debug("joint %s epoch %d val_acc %.4f", m.config.label(), epoch, acc)
        if acc > best["acc"]:
            best.update(acc=acc, params=params, epoch=epoch)

    _fit(m.params(), len(x), loss_grad, opt, on_epoch, what=f"joint training for {m.config.label()}")
    return MclModel.from_params(best["params"], m.config, m.head.class_count)


def evaluate(m, ds, split="test"):
    """Accuracy, classification error and reconstruction MSE on one split.

    ``split=None`` (or a dataset without a split) evaluates every sample.
    """
    idx = np.arange(len(ds)) if split is None or ds.split is None else ds.split[split]
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    y = ds.samples[idx]
    x = downsample(y, m.config.I, batch=True)
    acc = _accuracy(m.params(), m.config.order, x, ds.labels[idx])
    mse = reconstruction_mse(m.cs, m.fs, x, y)
    return Evaluation(acc, 1.0 - acc, mse)


def class_probabilities(m, y):
    return softmax(forward(m, y))


# -- checkpoints -----------------------------------------------------------------

MODEL_MAGIC = b"MCLM"
MODEL_VERSION = 1


def save_model(m, path):
    """Binary checkpoint: magic, version, configuration dims, then every
    parameter array as (ndim, dims, float64 little-endian payload)."""
    k = m.config.order
    params = m.params()
    buf = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, k)]
    buf.append(struct.pack(f"<{3 * k}I", *m.config.I, *m.config.M, *m.i_max))
    buf.append(struct.pack("<II", m.head.class_count, len(params)))
    for p in params:
        p = np.ascontiguousarray(p, dtype="<f8")
        buf.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        buf.append(p.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(buf))


def load_model(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    version, k = struct.unpack_from("<II", raw, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    dims = struct.unpack_from(f"<{3 * k}I", raw, off)
    off += 12 * k
    class_count, count = struct.unpack_from("<II", raw, off)
    off += 8
    params = []
    for _ in range(count):
        (nd,) = struct.unpack_from("<I", raw, off)
        shape = struct.unpack_from(f"<{nd}I", raw, off + 4)
        off += 4 + 4 * nd
        n = int(np.prod(shape))
        params.append(np.frombuffer(raw, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape))
        off += 8 * n
    if off != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes")
    config = ConfigPoint(dims[:k], dims[k:2 * k])
    m = MclModel.from_params(params, config, class_count)
    if m.i_max != tuple(dims[2 * k:]):
        raise ValueError(f"{path}: synthesis factors disagree with stored I^max")
    return m
