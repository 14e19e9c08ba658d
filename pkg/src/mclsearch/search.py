"""Configuration search driven by the reconstruction MSE reached at initialization.

A grid of (resolution, measurement) pairs is scanned cheaply by running only
the reconstruction initialization for each point. Points can then be ranked
by that MSE, optionally trained end to end, and the relation between the
surrogate and the final classification error summarized with Pearson
correlations.
"""

import csv
import io
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import NamedTuple

import numpy as np

from .model import (
    ConfigPoint,
    MclModel,
    evaluate,
    init_reconstruction,
    init_task_head,
    reconstruction_mse,
    train_joint,
)
from .optim import DivergenceError
from .tensor import downsample

log = logging.getLogger(__name__)

__all__ = [
    "ConfigGrid",
    "ConfigPoint",
    "EvalRecord",
    "CorrelationReport",
    "Report",
    "enumerate_grid",
    "compression_rate",
    "surrogate_scan",
    "rank_by_mse",
    "full_evaluate",
    "average_records",
    "pearson",
    "build_report",
    "paper_grid",
    "write_results",
    "read_results",
    "load_fixture",
    "FIXTURES",
]

FIXTURES = ("pubfig83", "caltech101")


@dataclass(frozen=True)
class ConfigGrid:
    """Feasible sampling resolutions and measurement shapes.

    Every measurement extent must fit within the largest resolution of its
    mode; synthesized features always have that largest resolution.
    """

    resolutions: tuple
    measurements: tuple

    def __post_init__(self):
        res = tuple(tuple(int(d) for d in r) for r in self.resolutions)
        mea = tuple(tuple(int(d) for d in m) for m in self.measurements)
        object.__setattr__(self, "resolutions", res)
        object.__setattr__(self, "measurements", mea)
        if not res or not mea:
            raise ValueError("grid needs at least one resolution and one measurement shape")
        k = len(res[0])
        if any(len(s) != k for s in res + mea):
            raise ValueError("all shapes in a grid must have the same number of modes")
        if min(min(s) for s in res + mea) < 1:
            raise ValueError("all extents must be positive")
        i_max = self.i_max
        for m in mea:
            if any(mk > ik for mk, ik in zip(m, i_max)):
                raise ValueError(f"measurement shape {m} exceeds maximum resolution {i_max}")

    @property
    def i_max(self):
        return tuple(max(r[k] for r in self.resolutions) for k in range(len(self.resolutions[0])))

    @property
    def order(self):
        return len(self.resolutions[0])

    def __len__(self):
        return len(self.resolutions) * len(self.measurements)

    @classmethod
    def from_bounds(cls, i_min, i_max, i_step, m_min, m_max, m_step, tied=()):
        """Grid from per-mode ``[min, max]`` bounds and steps.

        Values run from max down to min. Modes listed in ``tied`` (1-based)
        share one value index, e.g. ``tied=(1, 2)`` for square images.
        """

        def shapes(lo, hi, step):
            axes = []
            for k, (a, b, s) in enumerate(zip(lo, hi, step), start=1):
                if a > b or s < 1:
                    raise ValueError(f"invalid bounds for mode {k}: [{a}, {b}] step {s}")
                axes.append(list(range(b, a - 1, -s)))
            tied_modes = sorted({t - 1 for t in tied})
            if len(tied_modes) > 1:
                lengths = {len(axes[t]) for t in tied_modes}
                if len(lengths) != 1:
                    raise ValueError("tied modes must have the same number of values")
                free = [k for k in range(len(axes)) if k not in tied_modes]
                out = []
                for j in range(lengths.pop()):
                    for rest in itertools.product(*[axes[k] for k in free]):
                        s = [0] * len(axes)
                        for t in tied_modes:
                            s[t] = axes[t][j]
                        for k, v in zip(free, rest):
                            s[k] = v
                        out.append(tuple(s))
                return out
            return list(itertools.product(*axes))

        return cls(tuple(shapes(i_min, i_max, i_step)), tuple(shapes(m_min, m_max, m_step)))

    @classmethod
    def from_dict(cls, d):
        if "resolutions" in d or "measurements" in d:
            missing = {"resolutions", "measurements"} - set(d)
            if missing:
                raise ValueError(f"grid is missing field(s): {', '.join(sorted(missing))}")
            return cls(d["resolutions"], d["measurements"])
        keys = ["I_min", "I_max", "I_step", "M_min", "M_max", "M_step"]
        missing = [k for k in keys if k not in d]
        if missing:
            raise ValueError(f"grid is missing field(s): {', '.join(missing)}")
        return cls.from_bounds(*[d[k] for k in keys], tied=d.get("tied", ()))

    def to_dict(self):
        return {
            "resolutions": [list(r) for r in self.resolutions],
            "measurements": [list(m) for m in self.measurements],
        }


def paper_grid():
    """The 5 x 6 grid of RGB resolutions and single-channel measurement shapes."""
    return ConfigGrid(
        [(s, s, 3) for s in (256, 224, 192, 160, 128)],
        [(s, s, 1) for s in (30, 28, 26, 24, 22, 20)],
    )


def _desc(shape):
    return tuple(-d for d in shape)


def enumerate_grid(grid):
    """All (resolution, measurement) pairs, largest resolution first and,
    within a resolution, largest measurement shape first."""
    if len(grid) == 0:
        raise ValueError("empty grid")
    res = sorted(set(grid.resolutions), key=_desc)
    mea = sorted(set(grid.measurements), key=_desc)
    return [ConfigPoint(i, m) for i in res for m in mea]


def compression_rate(config):
    """Sampled elements per measurement, ``prod(I) / prod(M)``."""
    return float(np.prod(config.I, dtype=np.float64) / np.prod(config.M, dtype=np.float64))


@dataclass
class EvalRecord:
    config: ConfigPoint
    init_mse: float
    compression_rate: float = None
    accuracy: float = None
    ce: float = None
    seed: int = None
    runtime_s: float = None
    dataset: str = "dataset"
    operators: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.compression_rate is None:
            self.compression_rate = compression_rate(self.config)
        if self.init_mse is not None and self.init_mse < 0:
            raise ValueError("init_mse must be nonnegative")
        if self.accuracy is not None and self.ce is None:
            self.ce = 1.0 - self.accuracy


def _scan_one(ds, config, opt, split):
    t0 = time.perf_counter()
    try:
        cs, fs, _ = init_reconstruction(ds, config, opt)
    except DivergenceError as exc:
        raise DivergenceError(f"[{config.label()}] {exc}", exc.epoch) from exc
    idx = ds.split[split] if ds.split is not None else np.arange(len(ds))
    y = ds.samples[idx]
    mse = reconstruction_mse(cs, fs, downsample(y, config.I, batch=True), y)
    return EvalRecord(config, mse, seed=opt.seed, runtime_s=time.perf_counter() - t0,
                      dataset=ds.name, operators=(cs, fs))


def _map(fn, args, jobs):
    if jobs is None or jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map preserves submission order, so results come back in grid order
        return list(pool.map(fn, *zip(*args)))


def surrogate_scan(ds, grid, opt, split="test", jobs=1):
    """Run the reconstruction initialization for every grid point.

    Returns one record per point, in grid order, holding the per-element
    MSE on ``split`` ("test" by default, "val" for leakage-averse runs).
    """
    if ds.split is None:
        raise ValueError("dataset has no train/val/test split")
    if ds.shape != grid.i_max:
        raise ValueError(f"dataset shape {ds.shape} differs from the grid maximum {grid.i_max}")
    points = enumerate_grid(grid)
    records = _map(_scan_one, [(ds, p, opt, split) for p in points], jobs)
    for r in records:
        log.info("scan %s seed=%s init_mse=%.6g", r.config.label(), r.seed, r.init_mse)
    return records


def _rank_key(r):
    seed = -1 if r.seed is None else r.seed
    return (r.init_mse, _desc(r.config.I), _desc(r.config.M), seed)


def rank_by_mse(records):
    """Records ordered by ascending surrogate MSE; ties go to the larger
    configuration (resolution, then measurements)."""
    return sorted(records, key=_rank_key)


def average_records(records):
    """Collapse per-seed records into one record per configuration.

    Means are taken over the seeds that carry the field; order follows the
    first appearance of each configuration.
    """
    groups = {}
    for r in records:
        groups.setdefault((r.dataset, r.config), []).append(r)
    out = []
    for (name, config), rs in groups.items():
        def mean(attr):
            vals = [getattr(r, attr) for r in rs if getattr(r, attr) is not None]
            return float(np.mean(vals)) if vals else None

        rt = mean("runtime_s")
        out.append(EvalRecord(config, mean("init_mse"), accuracy=mean("accuracy"), ce=mean("ce"),
                              seed=rs[0].seed if len(rs) == 1 else None,
                              runtime_s=rt, dataset=name))
    return out


def _evaluate_one(ds, record, head, init_opt, joint_opt):
    t0 = time.perf_counter()
    seed = record.seed if record.seed is not None else init_opt.seed
    if record.operators is not None:
        cs, fs = record.operators
    else:
        cs, fs, _ = init_reconstruction(ds, record.config, init_opt.with_seed(seed))
    model = MclModel(cs, fs, head.copy(), record.config)
    model = train_joint(model, ds, joint_opt.with_seed(seed))
    ev = evaluate(model, ds, "test")
    runtime = (record.runtime_s or 0.0) + time.perf_counter() - t0
    return replace(record, accuracy=ev.accuracy, ce=ev.ce, runtime_s=runtime)


def full_evaluate(ds, records, init_opt, joint_opt, top_k=None, head=None, jobs=1):
    """Train and test the selected configurations end to end.

    The task head is initialized once (unless supplied) and shared by every
    configuration. With ``top_k`` only the ``top_k`` configurations with the
    lowest seed-averaged surrogate MSE are trained; every seed record of a
    selected configuration is evaluated. Records keep their input order.
    """
    records = list(records)
    if top_k == 0 or not records:
        return records
    if top_k is None:
        chosen = {r.config for r in records}
    else:
        ranked = rank_by_mse(average_records(records))
        chosen = {r.config for r in ranked[:top_k]}
    if head is None:
        head = init_task_head(ds, joint_opt)
    todo = [i for i, r in enumerate(records) if r.config in chosen]
    done = _map(_evaluate_one, [(ds, records[i], head, init_opt, joint_opt) for i in todo], jobs)
    out = list(records)
    for i, r in zip(todo, done):
        log.info("eval %s seed=%s accuracy=%.4f init_mse=%.6g", r.config.label(), r.seed, r.accuracy, r.init_mse)
        out[i] = r
    return out


def pearson(xs, ys):
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D sequences of equal length")
    if len(x) < 2:
        raise ValueError("pearson needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined: zero variance")
    if len(x) == 2:
        # two distinct points always lie on a line
        return float(np.sign(dx[1] * dy[1]))
    r = float(np.dot(dx, dy)) / float(np.sqrt(sxx * syy))
    return min(1.0, max(-1.0, r))


class CorrelationReport(NamedTuple):
    pearson_ce_mse: float
    pearson_ce_rate: float
    n: int


class Report(NamedTuple):
    correlation: CorrelationReport
    ce_vs_mse: list
    ce_vs_rate: list


def build_report(records, per_seed=False):
    """Pearson correlations of classification error with the surrogate MSE and
    with the compression rate, plus the two plotting series.

    Series points are ``(x, y, I, M)`` tuples in record order.
    """
    rs = list(records) if per_seed else average_records(records)
    rs = [r for r in rs if r.ce is not None and r.init_mse is not None]
    if len(rs) < 2:
        raise ValueError("need at least 2 records with both ce and init_mse")
    ce = [r.ce for r in rs]
    rep = CorrelationReport(
        pearson(ce, [r.init_mse for r in rs]),
        pearson(ce, [r.compression_rate for r in rs]),
        len(rs),
    )
    mse_series = [(r.init_mse, r.ce, r.config.I, r.config.M) for r in rs]
    rate_series = [(r.compression_rate, r.ce, r.config.I, r.config.M) for r in rs]
    return Report(rep, mse_series, rate_series)


# -- results files -------------------------------------------------------------------


def _header(k):
    return (["dataset"] + [f"I{i}" for i in range(1, k + 1)] + [f"M{i}" for i in range(1, k + 1)]
            + ["compression_rate", "init_mse", "accuracy", "ce", "seed", "runtime_s"])


def _num(v):
    return "" if v is None else repr(float(v))


def write_results(records, path=None, timings=False):
    """Write records as CSV. Runtimes are left blank unless ``timings`` is set,
    keeping repeated runs byte-identical. Returns the text when ``path`` is None."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    k = records[0].config.order
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(k))
    for r in records:
        if r.config.order != k:
            raise ValueError("records mix configurations of different order")
        w.writerow([r.dataset, *r.config.I, *r.config.M, _num(r.compression_rate), _num(r.init_mse),
                    _num(r.accuracy), _num(r.ce), "" if r.seed is None else int(r.seed),
                    _num(r.runtime_s) if timings else ""])
    text = buf.getvalue()
    if path is None:
        return text
    with open(path, "w", newline="") as f:
        f.write(text)
    return path


def _parse_records(lines, source):
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{source}: empty results file") from None
    k = sum(1 for h in header if h.startswith("I") and h[1:].isdigit())
    if header != _header(k):
        raise ValueError(f"{source}: unexpected header {','.join(header)}")

    def opt(s, conv=float):
        return conv(s) if s.strip() != "" else None

    out = []
    for n, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"{source}:{n}: expected {len(header)} fields, got {len(row)}")
        config = ConfigPoint([int(v) for v in row[1:1 + k]], [int(v) for v in row[1 + k:1 + 2 * k]])
        rest = row[1 + 2 * k:]
        out.append(EvalRecord(config, opt(rest[1]), compression_rate=opt(rest[0]), accuracy=opt(rest[2]),
                              ce=opt(rest[3]), seed=opt(rest[4], int), runtime_s=opt(rest[5]),
                              dataset=row[0]))
    return out


def read_results(path):
    with open(path, newline="") as f:
        return _parse_records(f.read().splitlines(), path)


def load_fixture(name):
    """Published result tables (accuracy as a fraction, test-set init MSE)."""
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    text = resources.files("mclsearch").joinpath("fixtures", f"{name}.csv").read_text()
    return _parse_records(text.splitlines(), f"fixture {name}")
