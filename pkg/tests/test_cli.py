import json

import pytest

from fpnetlab import cli

TINY = """
[data]
n_per_zone = 10
n_ood = 40

[train]
epochs_stage1 = 1
epochs_stage2 = 1
batch = 32
lr_stage1 = 1e-3
lr_stage2 = 1e-3

[ad]
epochs = 1
batch = 32
grid = 50

[sweeps]
fine_tune_sizes = [20]
fine_tune_epochs = 1
knn_ks = [1, 3]
"""


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.toml"
    p.write_text(TINY)
    return str(p)


@pytest.fixture(scope="module")
def trained_run(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    for verb in ("gen-data", "train", "eval"):
        assert cli.main([verb, "--config", tiny_config, "--out", str(out)]) == 0
    return out


def run(verb, cfg, out, *extra):
    return cli.main([verb, "--config", cfg, "--out", str(out), *extra])


def test_gen_data_layout(trained_run):
    rep = json.loads((trained_run / "reports" / "data.json").read_text())
    assert rep["metrics"]["n_train"] == 160 and rep["metrics"]["n_ood_test"] == 20
    assert (trained_run / "config.toml").exists() and (trained_run / "config.hash").exists()
    for name in ("train", "val", "test", "ood_train", "ood_test"):
        assert (trained_run / "data" / f"{name}.json").exists()


def test_train_writes_checkpoint_and_log(trained_run):
    assert (trained_run / "checkpoints" / "fpnet_N20.tnck").exists()
    lines = (trained_run / "logs" / "train_N20.jsonl").read_text().splitlines()
    assert lines and "loss" in json.loads(lines[-1])


def test_train_resumes_without_retraining(trained_run, tiny_config, caplog):
    before = json.loads((trained_run / "reports" / "train.json").read_text())
    with caplog.at_level("INFO", logger="fpnetlab"):
        assert run("train", tiny_config, trained_run) == 0
    assert "resuming" in caplog.text
    after = json.loads((trained_run / "reports" / "train.json").read_text())
    assert after["checkpoints"] == before["checkpoints"]
    assert after["metrics"] == before["metrics"]


def test_eval_rows_include_codecs(trained_run):
    rep = json.loads((trained_run / "reports" / "eval.json").read_text())
    methods = [r["method"] for r in rep["rows"]]
    assert methods == ["FPNet", "Type0", "Type1"]
    assert rep["provenance"]["seeds"]["train"] == 0
    assert (trained_run / "reports" / "eval.csv").read_text().startswith("method,")


def test_eval_without_checkpoint_fails(tiny_config, tmp_path, capsys):
    assert run("gen-data", tiny_config, tmp_path) == 0
    assert run("eval", tiny_config, tmp_path) == 2
    assert "fpnetlab train" in capsys.readouterr().err


@pytest.mark.parametrize("verb", ["drift", "ad-eval"])
def test_verbs_needing_a_model_fail_cleanly(verb, tiny_config, tmp_path):
    assert run(verb, tiny_config, tmp_path) == 2


def test_config_mismatch_is_refused(trained_run, tiny_config, capsys):
    assert run("eval", tiny_config, trained_run, "--seed", "5") == 2
    assert "already holds config" in capsys.readouterr().err


def test_report_is_byte_stable(trained_run):
    assert cli.main(["report", "--out", str(trained_run)]) == 0
    first = (trained_run / "report.md").read_bytes()
    table = (trained_run / "tables" / "metrics.csv").read_bytes()
    assert cli.main(["report", "--out", str(trained_run)]) == 0
    assert (trained_run / "report.md").read_bytes() == first
    assert (trained_run / "tables" / "metrics.csv").read_bytes() == table
    text = first.decode()
    assert "## eval" in text and "- drift: not run" in text


def test_report_needs_a_run_directory(tmp_path):
    assert cli.main(["report", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("metric", ["data:n_train", "train:N20.accuracy", "eval:Type1.sgcs"])
def test_reproduce_is_identical(trained_run, metric):
    assert cli.main(["reproduce", "--out", str(trained_run), "--metric", metric]) == 0
    out = json.loads((trained_run / "reports" / "reproduce.json").read_text())
    assert out["identical"] and out["stored"] == out["recomputed"]


def test_reproduce_random_pick_and_unknown_metric(trained_run):
    assert cli.main(["reproduce", "--out", str(trained_run), "--pick-seed", "3"]) == 0
    assert cli.main(["reproduce", "--out", str(trained_run), "--metric", "eval:nope"]) == 2


def test_downstream_verbs_on_tiny_run(trained_run, tiny_config):
    assert run("drift", tiny_config, trained_run, "--sizes", "20") == 0
    assert run("ad-eval", tiny_config, trained_run) == 0
    rep = json.loads((trained_run / "reports" / "ad_eval.json").read_text())
    assert rep["metrics"]["threshold"] > 0
    assert abs(sum(rep["misrouting"]) - 1) < 1e-9
    assert (trained_run / "checkpoints" / "adblock.tnck").exists()
    assert (trained_run / "reports" / "ad_sweep.csv").exists()


def test_sweep_zones_and_bad_lists(tiny_config, tmp_path):
    assert run("sweep-zones", tiny_config, tmp_path, "--zones", "5") == 0
    rep = json.loads((tmp_path / "reports" / "sweep_zones.json").read_text())
    assert [r["n_zones"] for r in rep["rows"]] == [5]
    assert run("sweep-alpha", tiny_config, tmp_path, "--alphas", "1,x") == 2


def test_unknown_profile_and_missing_config(tmp_path):
    assert cli.main(["gen-data", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        cli.main(["gen-data", "--profile", "turbo"])
