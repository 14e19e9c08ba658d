"""Adam with piecewise-constant learning-rate schedules, plus a
finite-difference gradient checker."""

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "DivergenceError",
    "OptimizerConfig",
    "AdamState",
    "lr_at",
    "adam_step",
    "finite_diff_check",
    "GradCheckReport",
    "init_schedule",
    "joint_schedule",
]


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient becomes non-finite."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


@dataclass(frozen=True)
class OptimizerConfig:
    epochs: int = 35
    lr_stages: tuple = ((1, 1e-3), (6, 1e-4), (26, 1e-5))
    weight_decay: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        stages = tuple((int(s), float(lr)) for s, lr in self.lr_stages)
        object.__setattr__(self, "lr_stages", stages)
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if not stages:
            raise ValueError("lr_stages must not be empty")
        if stages[0][0] != 1:
            raise ValueError("the first learning-rate stage must start at epoch 1")
        starts = [s for s, _ in stages]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("lr_stages start epochs must be strictly increasing")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "lr_stages": [list(s) for s in self.lr_stages],
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown optimizer field(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        if "lr_stages" in d:
            d["lr_stages"] = tuple(tuple(s) for s in d["lr_stages"])
        return cls(**d)


def init_schedule(**overrides):
    """Reconstruction-initialization defaults: 35 epochs, rate drops at
    epochs 6 and 26, weight decay 5e-5."""
    return replace(OptimizerConfig(), **overrides)


def joint_schedule(**overrides):
    """Task-head and joint-training defaults: 120 epochs, rate drops at
    epochs 21 and 101, weight decay 1e-4."""
    base = OptimizerConfig(
        epochs=120,
        lr_stages=((1, 1e-3), (21, 1e-4), (101, 1e-5)),
        weight_decay=1e-4,
    )
    return replace(base, **overrides)


def lr_at(cfg, epoch):
    """Learning rate of the last stage whose start epoch is <= ``epoch`` (1-based)."""
    if not 1 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{cfg.epochs}")
    rate = cfg.lr_stages[0][1]
    for start, lr in cfg.lr_stages:
        if start <= epoch:
            rate = lr
        else:
            break
    return rate


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(state, params, grads, lr, cfg):
    """One Adam update with coupled L2 weight decay.

    The effective gradient is ``grad + weight_decay * param``. ``state`` is
    advanced in place; new parameter arrays are returned.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append(p - lr * mhat / (np.sqrt(vhat) + cfg.epsilon))
    return out


@dataclass
class GradCheckReport:
    passed: bool
    worst_error: float
    worst_param: int
    worst_index: tuple
    analytic: float
    numeric: float

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} worst relative error {self.worst_error:.3e} at param "
            f"{self.worst_param} index {self.worst_index} "
            f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e})"
        )


def finite_diff_check(loss, params, grads, step=1e-5, tolerance=1e-5, floor=1e-3):
    """Compare analytic gradients with central differences, coordinate by coordinate.

    Parameters
    ----------
    loss : callable
        ``loss(params) -> float`` for a list of arrays.
    params : list of ndarray
        Point of evaluation; not modified.
    grads : list of ndarray
        Analytic gradients at ``params``.
    step : float
        Central-difference step.
    tolerance : float
        Largest accepted relative error.
    floor : float
        Relative errors are measured against ``max(|numeric|, floor * g_max)``
        where ``g_max`` is the largest numeric gradient magnitude, so that
        near-zero coordinates are judged on an absolute scale.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    numeric = []
    for p in params:
        num = np.zeros_like(p)
        flat = p.reshape(-1)
        nflat = num.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = loss(params)
            flat[j] = orig - step
            fm = loss(params)
            flat[j] = orig
            nflat[j] = (fp - fm) / (2.0 * step)
        numeric.append(num)
    gmax = max((float(np.max(np.abs(n))) for n in numeric if n.size), default=0.0)
    scale = max(floor * gmax, np.finfo(float).tiny)
    worst = (-1.0, 0, (), 0.0, 0.0)
    for i, (a, n) in enumerate(zip(grads, numeric)):
        a = np.asarray(a, dtype=np.float64)
        if a.shape != n.shape:
            raise ValueError(f"gradient {i} has shape {a.shape}, expected {n.shape}")
        err = np.abs(a - n) / np.maximum(np.abs(n), scale)
        if err.size:
            j = int(np.argmax(err))
            if err.flat[j] > worst[0]:
                idx = np.unravel_index(j, err.shape)
                worst = (float(err.flat[j]), i, tuple(int(x) for x in idx), float(a.flat[j]), float(n.flat[j]))
    err, i, idx, av, nv = worst
    err = max(err, 0.0)
    return GradCheckReport(err <= tolerance, err, i, idx, av, nv)
