import csv
import io
import json

import pytest
import yaml
from click.testing import CliRunner

from intersection_pomcp.bench import CSV_FIELDS
from intersection_pomcp.cli import main


@pytest.fixture
def fast_cfg(tmp_path):
    p = tmp_path / "fast.yaml"
    p.write_text(yaml.safe_dump({"solver": {"tree_queries": 40}, "simulation": {"warmup": 4.0}}))
    return str(p)


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def invoke(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def test_episode_prints_json(fast_cfg):
    res = invoke("--config", fast_cfg, "episode", "--policy", "ttc", "--seed", "3", "--density", "0.3")
    assert res.exit_code == 0
    rec = json.loads(res.output)
    assert rec["seed"] == 3
    assert rec["crossed"] + rec["collided"] + rec["timed_out"] == 1


def test_episode_detail_writes_jsonl(fast_cfg, tmp_path):
    out = tmp_path / "ep.json"
    res = invoke("--config", fast_cfg, "episode", "--policy", "pomcp", "--out", str(out), "--detail")
    assert res.exit_code == 0
    assert json.loads(out.read_text())["seed"] == 0
    lines = (tmp_path / "ep.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["action"] is None
    assert "root_q" in json.loads(lines[1])["diagnostics"]


def test_batch_csv_and_determinism(fast_cfg, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        res = invoke("--config", fast_cfg, "batch", "--policy", "ttc", "--turn", "left",
                     "--episodes", "4", "--seed", "2", "--out", str(p), "--detail")
        assert res.exit_code == 0
    assert a.read_bytes() == b.read_bytes()
    rows = _rows(a.read_text())
    assert tuple(rows[0]) == CSV_FIELDS
    assert rows[0]["turn"] == "left" and rows[0]["episodes"] == "4"
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == 4


def test_batch_to_stdout(fast_cfg):
    res = invoke("--config", fast_cfg, "batch", "--policy", "random", "--episodes", "2")
    assert res.exit_code == 0
    assert _rows(res.output)[0]["policy"] == "random"


def test_sweep_threshold(fast_cfg):
    res = invoke("--config", fast_cfg, "sweep-threshold", "--episodes", "2", "--grid", "0,2.5")
    assert res.exit_code == 0
    assert [r["threshold"] for r in _rows(res.output)] == ["0.000000", "2.500000"]


def test_sweep_tradeoff(fast_cfg):
    res = invoke("--config", fast_cfg, "sweep-tradeoff", "--episodes", "1", "--scales", "1,4", "--grid", "4.5")
    assert res.exit_code == 0
    rows = _rows(res.output)
    assert [(r["policy"], r["penalty_scale"]) for r in rows] == [
        ("pomcp", "1.000000"), ("pomcp", "4.000000"), ("ttc", "1.000000")]


def test_sweep_density(fast_cfg):
    res = invoke("--config", fast_cfg, "sweep-density", "--episodes", "1", "--grid", "0.1,0.5")
    assert res.exit_code == 0
    rows = _rows(res.output)
    assert [(r["density"], r["policy"]) for r in rows] == [
        ("0.100000", "pomcp"), ("0.100000", "ttc"), ("0.500000", "pomcp"), ("0.500000", "ttc")]


def test_probe_prediction(fast_cfg):
    res = invoke("--config", fast_cfg, "probe-prediction", "--horizon", "4", "--episodes", "3")
    assert res.exit_code == 0
    lines = res.output.splitlines()
    assert lines[0] == "horizon,seconds,mean_error"
    assert len(lines) == 6
    assert lines[1].startswith("0,0.00,0.000000")


@pytest.mark.parametrize(
    "args",
    [
        ["batch", "--policy", "greedy"],
        ["batch", "--turn", "straight"],
        ["batch", "--density", "1.5"],
        ["batch", "--episodes", "0"],
        ["sweep-threshold", "--grid", "a,b"],
        ["sweep-density", "--grid", "1.0"],
        ["probe-prediction", "--horizon", "0"],
    ],
)
def test_usage_errors_exit_nonzero(args):
    res = CliRunner().invoke(main, args)
    assert res.exit_code != 0


def test_bad_config_exits_nonzero(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({"solver": {"depht": 3}}))
    res = CliRunner().invoke(main, ["--config", str(p), "batch"])
    assert res.exit_code != 0
    assert "depht" in res.output
    res = CliRunner().invoke(main, ["--config", str(tmp_path / "missing.yaml"), "batch"])
    assert res.exit_code != 0
