import csv
import hashlib
import json

import pytest

from adaptive_triplet import data_io
from adaptive_triplet.cli import main
from cli_helpers import run, run_pipeline


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    run_pipeline(d)
    return d


def test_pipeline_outputs_parse(pipeline):
    d = pipeline
    assert len(data_io.load_feature_dataset(d / "items.csv")) == 300
    assert len(data_io.load_ids(d / "test.txt")) == 60
    assert len(data_io.load_quadruplets(d / "quads.csv")) == 240 * 3
    net, head = data_io.load_model(d / "model.json")
    assert head is None and net.in_dim == 8
    assert data_io.load_report(d / "report.json").epochs_run == 2
    ev = json.loads((d / "eval.json").read_text())
    assert ev["method"] == "reference_image" and -1 <= ev["srocc"] <= 1 and ev["n"] == 59
    assert json.loads((d / "peval.json").read_text())["method"] == "pairwise_distance"
    cmp = json.loads((d / "compare.json").read_text())
    assert list(cmp["summary"]) == ["regression", "fixed", "adaptive"]
    assert len(cmp["runs"]) == 6


def test_stats_conserves_count(pipeline):
    with open(pipeline / "hist.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 7
    assert sum(int(r["count"]) for r in rows) == len(data_io.load_quadruplets(pipeline / "quads.csv"))


def test_compare_prints_three_columns(pipeline, capsys):
    d = pipeline
    run("compare", "--dataset", d / "items.csv", "--config-fixed", d / "fixed.json",
        "--config-adaptive", d / "adaptive.json", "--seeds", 1, "--pairs-per-anchor", 3, "--out", d / "c1.json")
    out = capsys.readouterr().out
    assert all(name in out for name in ("regression", "fixed", "adaptive", "collapse"))


def digest(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in d.iterdir()}


def test_inputs_not_mutated(pipeline):
    d = pipeline
    before = digest(d)
    run("train", "--dataset", d / "train.csv", "--quads", d / "quads.csv", "--config", d / "adaptive.json",
        "--out-model", d / "again.json", "--out-report", d / "again_r.json")
    after = digest(d)
    for name, h in before.items():
        assert after[name] == h, name


def test_usage_errors_exit_2(pipeline, tmp_path, capsys):
    d = pipeline
    out = tmp_path / "m.json"
    # --margin without fixed mode
    assert main(["train", "--dataset", str(d / "train.csv"), "--quads", str(d / "quads.csv"), "--mode", "adaptive",
                 "--margin", "0.5", "--out-model", str(out), "--out-report", str(tmp_path / "r.json")]) == 2
    assert "--margin" in capsys.readouterr().err
    assert not out.exists()
    assert main(["stats", "--quads", str(d / "quads.csv"), "--bins", "0", "--out", str(tmp_path / "h.csv")]) == 2
    assert main(["gen-triplets", "--dataset", str(d / "train.csv"), "--mode", "pairwise",
                 "--out", str(tmp_path / "q.csv")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["train", "--mode", "sometimes"])
    assert info.value.code == 2


def test_bad_input_file_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,mos,f0\na,2,0.5\nb,3,nan\n")
    assert main(["gen-triplets", "--dataset", str(bad), "--out", str(tmp_path / "q.csv")]) == 2
    assert ":3:" in capsys.readouterr().err
    assert not (tmp_path / "q.csv").exists()


def test_missing_file_exit_1(tmp_path):
    assert main(["stats", "--quads", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "h.csv")]) == 1


def test_margin_flag_overrides_config(pipeline):
    from adaptive_triplet.cli import _config_with_flags, build_parser

    args = build_parser().parse_args(["train", "--dataset", "x", "--quads", "y", "--config",
                                      str(pipeline / "fixed.json"), "--mode", "fixed", "--margin", "0.3",
                                      "--out-model", "m", "--out-report", "r"])
    cfg = _config_with_flags(args)
    assert cfg.margin_mode.is_fixed and cfg.margin_mode.m == 0.3 and cfg.epochs == 2
