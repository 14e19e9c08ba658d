"""Command-line front end.

Commands: ``synth``, ``scan``, ``train``, ``search``, ``correlate``, ``report``.
Run settings come from a JSON document passed with ``--config``::

    {
      "synthetic": {"class_count": 3, "samples_per_class": 100,
                    "shape": [32, 32, 3], "rank": [6, 6, 2], "noise": 0.05},
      "dataset": "path/to/manifest.csv",          # instead of "synthetic"
      "split_seed": 0,
      "grid": {"resolutions": [[32, 32, 3]], "measurements": [[8, 8, 1]]},
      "init_optimizer": {"epochs": 35, ...},
      "joint_optimizer": {"epochs": 120, ...},
      "head_widths": [8, 16],
      "config_point": {"I": [32, 32, 3], "M": [8, 8, 1]},   # train only
      "seeds": [0, 1, 2],
      "top_k": null,
      "mse_split": "test",
      "out": "runs/example"
    }

Progress goes to stderr as one JSON object per line; results go to files
and a one-line summary to stdout.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .data import SyntheticSpec, load_dataset, make_synthetic, save_dataset, stratified_split
from .model import ConfigPoint, MclModel, evaluate, init_reconstruction, init_task_head, save_model, train_joint
from .optim import DivergenceError, OptimizerConfig, init_schedule, joint_schedule
from .search import (
    FIXTURES,
    ConfigGrid,
    EvalRecord,
    average_records,
    build_report,
    full_evaluate,
    load_fixture,
    rank_by_mse,
    read_results,
    surrogate_scan,
    write_results,
)

log = logging.getLogger("mclsearch")

COMMANDS = ("synth", "scan", "train", "search", "correlate", "report")


class ConfigError(ValueError):
    """A run configuration is malformed; the message names the field."""


def _split_name(v):
    if v not in ("test", "val"):
        raise ValueError("must be 'test' or 'val'")
    return v


@dataclass
class RunConfig:
    synthetic: SyntheticSpec = None
    dataset: str = None
    split_seed: int = 0
    grid: ConfigGrid = None
    init_optimizer: OptimizerConfig = field(default_factory=init_schedule)
    joint_optimizer: OptimizerConfig = field(default_factory=joint_schedule)
    head_widths: tuple = (8, 16)
    config_point: ConfigPoint = None
    seeds: tuple = (0,)
    top_k: int = None
    mse_split: str = "test"
    out: str = "mcl_out"

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        kw = {}

        def parse(name, fn):
            if name in d and d[name] is not None:
                try:
                    kw[name] = fn(d[name])
                except (TypeError, ValueError, KeyError) as exc:
                    raise ConfigError(f"config field '{name}': {exc}") from None

        parse("synthetic", SyntheticSpec.from_dict)
        parse("dataset", str)
        parse("split_seed", int)
        parse("grid", ConfigGrid.from_dict)
        parse("init_optimizer", lambda v: OptimizerConfig.from_dict({**init_schedule().to_dict(), **v}))
        parse("joint_optimizer", lambda v: OptimizerConfig.from_dict({**joint_schedule().to_dict(), **v}))
        parse("head_widths", lambda v: tuple(int(x) for x in v))
        parse("config_point", lambda v: ConfigPoint(v["I"], v["M"]))
        parse("seeds", lambda v: tuple(int(x) for x in v))
        parse("top_k", int)
        parse("mse_split", _split_name)
        parse("out", str)
        cfg = cls(**kw)
        if (cfg.synthetic is None) == (cfg.dataset is None):
            raise ConfigError("config field 'dataset'/'synthetic': exactly one data source is required")
        if not cfg.seeds:
            raise ConfigError("config field 'seeds': at least one seed is required")
        if len(cfg.head_widths) != 2:
            raise ConfigError("config field 'head_widths': two channel counts are required")
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


@dataclass
class CommandOutcome:
    exit_code: int
    paths: list = field(default_factory=list)
    summary: str = ""


class _JsonLineHandler(logging.Handler):
    def emit(self, record):
        msg = {"t": round(time.time(), 3), "level": record.levelname.lower(), "msg": record.getMessage()}
        sys.stderr.write(json.dumps(msg) + "\n")


def _dataset(cfg):
    if cfg.synthetic is not None:
        ds = make_synthetic(cfg.synthetic, split_seed=cfg.split_seed)
    else:
        ds = load_dataset(cfg.dataset)
    ds.split = stratified_split(ds, seed=cfg.split_seed)
    return ds


def _outdir(args, cfg):
    out = Path(args.out or (cfg.out if cfg else "mcl_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(out, name, records=None, extra=None):
    meta = {"created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "version": __version__}
    if records is not None:
        meta["runtime_s"] = [
            {"config": r.config.label(), "seed": r.seed, "runtime_s": r.runtime_s} for r in records
        ]
    meta.update(extra or {})
    path = out / f"{name}.meta.json"
    path.write_text(json.dumps(meta, indent=2) + "\n")
    return path


def _seeds(args, cfg):
    if args.seeds:
        try:
            return tuple(int(s) for s in args.seeds.split(","))
        except ValueError:
            raise ConfigError(f"--seeds must be a comma-separated list of integers, got {args.seeds!r}") from None
    return cfg.seeds


def _require(cfg, name):
    if getattr(cfg, name) is None:
        raise ConfigError(f"config field '{name}' is required for this command")


def _scan_all(ds, cfg, seeds, jobs):
    records = []
    for seed in seeds:
        records += surrogate_scan(ds, cfg.grid, cfg.init_optimizer.with_seed(seed), split=cfg.mse_split, jobs=jobs)
    return records


def cmd_synth(args, cfg):
    _require(cfg, "synthetic")
    out = _outdir(args, cfg)
    ds = make_synthetic(cfg.synthetic)
    manifest = save_dataset(ds, out)
    return CommandOutcome(0, [manifest], f"wrote {len(ds)} samples of shape {ds.shape} to {out}")


def cmd_scan(args, cfg):
    _require(cfg, "grid")
    out = _outdir(args, cfg)
    ds = _dataset(cfg)
    records = _scan_all(ds, cfg, _seeds(args, cfg), args.jobs)
    path = write_results(records, out / "results.csv", timings=args.timings)
    meta = _write_meta(out, "results", records)
    best = rank_by_mse(average_records(records))[0]
    return CommandOutcome(0, [path, meta], f"scanned {len(records)} runs; lowest init_mse {best.init_mse:.6g} at {best.config.label()}")


def cmd_search(args, cfg):
    _require(cfg, "grid")
    out = _outdir(args, cfg)
    ds = _dataset(cfg)
    records = _scan_all(ds, cfg, _seeds(args, cfg), args.jobs)
    top_k = args.top_k if args.top_k is not None else cfg.top_k
    head = init_task_head(ds, cfg.joint_optimizer, widths=cfg.head_widths) if top_k != 0 else None
    records = full_evaluate(ds, records, cfg.init_optimizer, cfg.joint_optimizer, top_k=top_k, head=head, jobs=args.jobs)
    path = write_results(records, out / "results.csv", timings=args.timings)
    meta = _write_meta(out, "results", records, {"top_k": top_k})
    done = [r for r in average_records(records) if r.accuracy is not None]
    summary = f"evaluated {len(done)} configuration(s)"
    if done:
        best = max(done, key=lambda r: r.accuracy)
        summary += f"; best accuracy {best.accuracy:.4f} at {best.config.label()}"
    return CommandOutcome(0, [path, meta], summary)


def cmd_train(args, cfg):
    _require(cfg, "config_point")
    out = _outdir(args, cfg)
    ds = _dataset(cfg)
    point = cfg.config_point
    seed = _seeds(args, cfg)[0]
    t0 = time.perf_counter()
    cs, fs, history = init_reconstruction(ds, point, cfg.init_optimizer.with_seed(seed))
    head = init_task_head(ds, cfg.joint_optimizer, widths=cfg.head_widths)
    model = train_joint(MclModel(cs, fs, head, point), ds, cfg.joint_optimizer.with_seed(seed))
    ev = evaluate(model, ds, "test")
    init_mse = evaluate(MclModel(cs, fs, head, point), ds, "test").mse
    rec = EvalRecord(point, init_mse, accuracy=ev.accuracy, ce=ev.ce, seed=seed,
                     runtime_s=time.perf_counter() - t0, dataset=ds.name)
    model_path = out / "model.mclm"
    save_model(model, model_path)
    path = write_results([rec], out / "results.csv", timings=args.timings)
    meta = _write_meta(out, "results", [rec], {"init_history": history})
    return CommandOutcome(0, [model_path, path, meta],
                          f"{point.label()}: accuracy {ev.accuracy:.4f} (CE {100 * ev.ce:.2f}%), init_mse {init_mse:.6g}")


def _records_for(args):
    if args.fixture:
        return load_fixture(args.fixture), args.fixture
    if args.results:
        return read_results(args.results), Path(args.results).stem
    raise ConfigError("one of --fixture or --results is required")


def cmd_correlate(args, cfg):
    records, name = _records_for(args)
    rep = build_report(records, per_seed=args.per_seed).correlation
    paths = []
    if args.out:
        out = _outdir(args, cfg)
        path = out / "correlation.json"
        path.write_text(json.dumps({"source": name, **rep._asdict()}, indent=2) + "\n")
        paths.append(path)
    print(f"pearson_ce_mse = {rep.pearson_ce_mse:.4f}")
    print(f"pearson_ce_rate = {rep.pearson_ce_rate:.4f}")
    print(f"n = {rep.n}")
    return CommandOutcome(0, paths, f"{name}: pearson(CE, MSE) = {rep.pearson_ce_mse:.4f}, "
                                     f"pearson(CE, rate) = {rep.pearson_ce_rate:.4f}, n = {rep.n}")


def _dims(d):
    return "x".join(str(v) for v in d)


def cmd_report(args, cfg):
    records, name = _records_for(args)
    rep = build_report(records, per_seed=args.per_seed)
    out = _outdir(args, cfg)
    paths = []
    for fname, series in (("ce_vs_mse.csv", rep.ce_vs_mse), ("ce_vs_rate.csv", rep.ce_vs_rate)):
        lines = ["x,y,I,M"] + [f"{x!r},{y!r},{_dims(i)},{_dims(m)}" for x, y, i, m in series]
        path = out / fname
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return CommandOutcome(0, paths, f"{name}: wrote {rep.correlation.n} points per series to {out}")


HANDLERS = {
    "synth": cmd_synth,
    "scan": cmd_scan,
    "train": cmd_train,
    "search": cmd_search,
    "correlate": cmd_correlate,
    "report": cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(prog="mclsearch", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    helps = {
        "synth": "write a synthetic dataset",
        "scan": "reconstruction-MSE scan over a configuration grid",
        "train": "full pipeline for one configuration",
        "search": "scan, rank, then train the top-k configurations",
        "correlate": "Pearson correlations of CE with MSE and compression rate",
        "report": "write the CE-vs-MSE and CE-vs-rate plot series",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seeds", help="comma-separated seeds (overrides the config)")
        s.add_argument("--jobs", type=int, default=1, help="worker processes")
        s.add_argument("--top-k", type=int, dest="top_k", help="configurations to train after ranking")
        s.add_argument("--fixture", choices=FIXTURES, help="bundled result table")
        s.add_argument("--results", help="results CSV to analyze")
        s.add_argument("--per-seed", action="store_true", help="correlate per-seed rows instead of seed means")
        s.add_argument("--timings", action="store_true", help="fill runtime_s in results CSVs")
        s.add_argument("-v", "--verbose", action="store_true", help="per-epoch progress on stderr")
    return p


def dispatch(argv):
    """Run one command and return its outcome (never raises for user errors)."""
    parser = build_parser()
    if not argv or argv[0] not in COMMANDS:
        if argv and argv[0] in ("-h", "--help", "--version"):
            parser.parse_args(argv)
        bad = argv[0] if argv else ""
        msg = f"unknown command {bad!r}" if bad else "no command given"
        sys.stderr.write(f"mclsearch: {msg}\n{parser.format_usage()}")
        return CommandOutcome(2, [], msg)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return CommandOutcome(int(exc.code or 0), [], "argument error")
    handler = _JsonLineHandler()
    root = logging.getLogger("mclsearch")
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        cfg = RunConfig.load(args.config) if args.config else None
        if cfg is None and args.command not in ("correlate", "report"):
            raise ConfigError("--config is required for this command")
        outcome = HANDLERS[args.command](args, cfg)
    except (ConfigError, DivergenceError, ValueError, FileNotFoundError) as exc:
        sys.stderr.write(f"mclsearch {args.command}: error: {exc}\n")
        return CommandOutcome(1, [], str(exc))
    finally:
        root.removeHandler(handler)
    print(outcome.summary)
    return outcome


def main(argv=None):
    outcome = dispatch(sys.argv[1:] if argv is None else argv)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
