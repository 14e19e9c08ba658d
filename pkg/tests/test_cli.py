import json
import subprocess
import sys

import pytest

from mclsearch.cli import ConfigError, RunConfig, dispatch, main
from mclsearch.model import load_model
from mclsearch.search import read_results

TINY = {
    "synthetic": {"class_count": 3, "samples_per_class": 10, "shape": [8, 8, 3], "rank": [2, 2, 1], "noise": 0.05},
    "grid": {"resolutions": [[8, 8, 3], [6, 6, 3]], "measurements": [[3, 3, 1], [2, 2, 1]]},
    "init_optimizer": {"epochs": 3, "lr_stages": [[1, 0.01]]},
    "joint_optimizer": {"epochs": 2, "lr_stages": [[1, 0.001]]},
    "head_widths": [4, 8],
    "seeds": [0],
}


def write_config(tmp_path, **over):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({**TINY, **over}))
    return str(path)


def test_correlate_fixture(capsys):
    assert main(["correlate", "--fixture", "pubfig83"]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("pearson_ce_mse"))
    assert abs(float(line.split("=")[1]) - 0.65) <= 0.05


def test_correlate_writes_json(tmp_path, capsys):
    assert main(["correlate", "--fixture", "caltech101", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "correlation.json").read_text())
    assert data["n"] == 30 and abs(data["pearson_ce_mse"] - 0.82) <= 0.05


def test_unknown_command(capsys):
    assert main(["frobnicate"]) != 0
    assert "usage" in capsys.readouterr().err


def test_no_command(capsys):
    assert main([]) != 0
    assert "usage" in capsys.readouterr().err


def test_malformed_config_names_field(tmp_path, capsys):
    cfg = write_config(tmp_path, init_optimizer={"epochs": "many"})
    assert main(["scan", "--config", cfg]) == 1
    assert "init_optimizer" in capsys.readouterr().err


def test_unknown_field(tmp_path, capsys):
    cfg = write_config(tmp_path, gird={})
    assert main(["scan", "--config", cfg]) == 1
    assert "gird" in capsys.readouterr().err


def test_two_sources_rejected():
    with pytest.raises(ConfigError, match="dataset"):
        RunConfig.from_dict({**TINY, "dataset": "x/manifest.csv"})


def test_scan_four_rows(tmp_path, capsys):
    out = tmp_path / "scan"
    assert main(["scan", "--config", write_config(tmp_path), "--out", str(out)]) == 0
    rows = (out / "results.csv").read_text().splitlines()
    assert len(rows) == 5
    assert all(r.accuracy is None for r in read_results(out / "results.csv"))
    assert (out / "results.meta.json").exists()


def test_seeds_flag(tmp_path, capsys):
    out = tmp_path / "scan"
    assert main(["scan", "--config", write_config(tmp_path), "--out", str(out), "--seeds", "3,4"]) == 0
    assert sorted({r.seed for r in read_results(out / "results.csv")}) == [3, 4]


def test_search_top_k(tmp_path, capsys):
    out = tmp_path / "search"
    assert main(["search", "--config", write_config(tmp_path), "--out", str(out), "--top-k", "1"]) == 0
    recs = read_results(out / "results.csv")
    assert len(recs) == 4 and sum(r.accuracy is not None for r in recs) == 1


def test_search_repeatable(tmp_path, capsys):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["search", "--config", cfg, "--out", str(a)]) == 0
    assert main(["search", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_train(tmp_path, capsys):
    out = tmp_path / "train"
    cfg = write_config(tmp_path, config_point={"I": [6, 6, 3], "M": [3, 3, 1]})
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    m = load_model(out / "model.mclm")
    assert m.config.I == (6, 6, 3) and m.i_max == (8, 8, 3)
    (rec,) = read_results(out / "results.csv")
    assert rec.accuracy is not None
    meta = json.loads((out / "results.meta.json").read_text())
    assert len(meta["init_history"]) == 3


def test_train_needs_point(tmp_path, capsys):
    assert main(["train", "--config", write_config(tmp_path)]) == 1
    assert "config_point" in capsys.readouterr().err


def test_synth_then_load(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--config", write_config(tmp_path), "--out", str(data)]) == 0
    assert (data / "manifest.csv").exists()
    cfg = {k: v for k, v in TINY.items() if k != "synthetic"}
    cfg["dataset"] = str(data / "manifest.csv")
    path = tmp_path / "from_disk.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "scan"
    assert main(["scan", "--config", str(path), "--out", str(out)]) == 0
    assert len(read_results(out / "results.csv")) == 4


def test_report_series(tmp_path, capsys):
    assert main(["report", "--fixture", "pubfig83", "--out", str(tmp_path)]) == 0
    for name in ("ce_vs_mse.csv", "ce_vs_rate.csv"):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines[0] == "x,y,I,M" and len(lines) == 31
    first = (tmp_path / "ce_vs_mse.csv").read_text().splitlines()[1].split(",")
    assert first[2:] == ["256x256x3", "30x30x1"]


def test_progress_on_stderr_is_json(tmp_path, capsys):
    assert main(["scan", "--config", write_config(tmp_path), "--out", str(tmp_path / "o")]) == 0
    err = [l for l in capsys.readouterr().err.splitlines() if l.strip()]
    assert err and all("msg" in json.loads(l) for l in err)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mclsearch", "correlate", "--fixture", "caltech101"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    assert "pearson_ce_rate" in proc.stdout


def test_dispatch_outcome(tmp_path, capsys):
    outcome = dispatch(["report", "--fixture", "caltech101", "--out", str(tmp_path)])
    assert outcome.exit_code == 0
    assert all(p.exists() for p in outcome.paths)
