import json
from importlib import resources

import jsonschema
import pytest

from mvfnet.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_USAGE, EXIT_WEIGHTS, main


def schema(name):
    return json.loads(resources.files("mvfnet").joinpath(f"schemas/{name}.schema.json").read_text())


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


SMALL = {
    "network": {"mvf_stages": ["res2"]},
    "train": {"epochs": 1, "decay_epochs": [1], "train_clips": 16, "val_clips": 8, "batch_size": 8},
    "eval": {"videos": 8},
}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "small.json"
    cfg.write_text(json.dumps(SMALL))
    weights = d / "w.bin"
    assert main(["train", str(cfg), "--out", str(weights), "--json"]) == EXIT_OK
    return cfg, weights


def test_cost_text(capsys):
    code, out, _ = run(capsys, "cost", "--backbone", "r50", "--alpha", "0", "--crops", "3", "--clips", "10")
    assert code == EXIT_OK
    assert "32.88G" in out and "32.9G × 30" in out


def test_cost_json_schema(capsys):
    code, out, _ = run(capsys, "cost", "--stages", "res4,res5", "--alpha", "0.125", "--per-layer", "--json")
    assert code == EXIT_OK
    jsonschema.validate(json.loads(out), schema("cost_report"))


@pytest.mark.parametrize("argv", [
    ["cost", "--backbone", "vgg"],
    ["cost", "--stages", "res9"],
    ["cost", "--alpha", "1.5"],
    ["cost", "--frames", "0"],
    ["gradcheck", "--target", "nothing"],
    [],
])
def test_usage_errors(capsys, argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == EXIT_USAGE
    capsys.readouterr()


def test_gradcheck_json(capsys):
    code, out, _ = run(capsys, "gradcheck", "--target", "mvf", "--json")
    assert code == EXIT_OK
    doc = json.loads(out)
    jsonschema.validate(doc, schema("gradcheck_report"))
    assert doc["passed"]


def test_gradcheck_failure_exit(capsys):
    code, out, _ = run(capsys, "gradcheck", "--target", "ops", "--corrupt")
    assert code == EXIT_CHECK and "FAIL" in out


def test_equiv_json(capsys):
    code, out, _ = run(capsys, "equiv", "--which", "slowonly", "--json")
    assert code == EXIT_OK
    jsonschema.validate(json.loads(out), schema("equiv_report"))


def test_config_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"lr": 1}}))
    assert run(capsys, "train", str(bad), "--out", str(tmp_path / "w.bin"))[0] == EXIT_CONFIG
    assert run(capsys, "eval", str(tmp_path / "missing.json"), str(tmp_path / "w.bin"))[0] == EXIT_CONFIG


def test_config_schema_accepts_defaults():
    from mvfnet.config import parse_config
    jsonschema.validate(parse_config(SMALL).to_dict(), schema("config"))


def test_train_outputs(trained):
    cfg, weights = trained
    rows = [json.loads(line) for line in open(f"{weights}.history.jsonl")]
    assert len(rows) == 1
    for row in rows:
        jsonschema.validate(row, schema("history_line"))
    assert weights.stat().st_size > 0


def test_train_report_schema(capsys, trained, tmp_path):
    cfg, _ = trained
    code, out, _ = run(capsys, "train", str(cfg), "--out", str(tmp_path / "w.bin"), "--json")
    assert code == EXIT_OK
    jsonschema.validate(json.loads(out), schema("train_report"))


def test_eval_json(capsys, trained):
    cfg, weights = trained
    code, out, _ = run(capsys, "eval", str(cfg), str(weights), "--json")
    assert code == EXIT_OK
    doc = json.loads(out)
    jsonschema.validate(doc, schema("eval_report"))
    assert doc["protocol"] == {"clips_per_video": 1, "crops": "center1", "views": 1}
    code, out, _ = run(capsys, "eval", str(cfg), str(weights), "--clips", "2", "--crops", "three", "--json")
    assert json.loads(out)["protocol"]["views"] == 6


def test_weight_errors(capsys, trained, tmp_path):
    cfg, weights = trained
    assert run(capsys, "eval", str(cfg), str(tmp_path / "none.bin"))[0] == EXIT_WEIGHTS
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"nope")
    assert run(capsys, "eval", str(cfg), str(junk))[0] == EXIT_WEIGHTS
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**SMALL, "network": {"mvf_stages": ["res3"]}}))
    assert run(capsys, "eval", str(other), str(weights))[0] == EXIT_WEIGHTS


def test_weights_roundtrip_same_metrics(capsys, trained, tmp_path):
    from mvfnet.weights_io import load_weights, save_weights
    cfg, weights = trained
    copy = tmp_path / "copy.bin"
    save_weights(copy, load_weights(weights))
    assert copy.read_bytes() == weights.read_bytes()
    a = run(capsys, "eval", str(cfg), str(weights), "--json")[1]
    b = run(capsys, "eval", str(cfg), str(copy), "--json")[1]
    assert a == b


@pytest.mark.parametrize("argv", [
    ["cost", "--backbone", "r101", "--frames", "16", "--json"],
    ["equiv", "--which", "c2d", "--seed", "3", "--json"],
    ["gradcheck", "--target", "block", "--seed", "5", "--json"],
])
def test_repeat_runs_identical(capsys, argv):
    assert run(capsys, *argv)[1] == run(capsys, *argv)[1]
