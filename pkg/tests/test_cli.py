import json

import pytest

from srtd_lab import cli


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({
        "methods": ["onehot-baseline", "SRTD+ID"], "seeds": [0], "scale": 0.1,
        "training": {"steps": 20}, "agent": {"steps": 5, "batch_size": 16, "hidden": [8, 8]}, "eval_episodes": 1,
    }))
    return str(path)


def test_subcommands_share_layout(config, tmp_path, monkeypatch, capsys):
    out = tmp_path / "runs"
    monkeypatch.setenv("SRTD_LAB_OUT", str(out))
    assert cli.main(["gen-data", "--config", config]) == 0
    assert (out / "seed0" / "data" / "dataset.bin").exists()
    assert cli.main(["train-embed", "--config", config, "--variant", "TE"]) == 0
    assert cli.main(["augment", "--config", config, "--method", "gaussian"]) == 0
    assert cli.main(["train-agent", "--config", config, "--method", "SRTD+ID"]) == 0
    assert cli.main(["eval", "--config", config, "--method", "SRTD+ID"]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert set(json.loads(line)) == {"seed", "method", "success_rate", "mean_return", "normalized_return"}
    assert (out / "seed0" / "embed-TE" / "manifest.json").exists()


def test_experiment_and_plot(config, tmp_path):
    out = tmp_path / "exp"
    assert cli.main(["experiment", "--config", config, "--out", str(out), "--seed", "0", "1"]) == 0
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header == "method,mix,seed,success_rate,mean_return,normalized_return"
    assert cli.main(["plot", "--out", str(out)]) == 0
    assert (out / "plots" / "results.png").exists() and (out / "plots" / "results.csv").exists()


def test_scale_flag(config, tmp_path):
    out = tmp_path / "s"
    assert cli.main(["gen-data", "--config", config, "--out", str(out), "--scale", "0.2"]) == 0
    mix = json.loads((out / "seed0" / "data" / "mix.json").read_text())
    assert mix["episodes"] == {"MR": 30, "RP": 20, "ME": 10}


def test_bad_input_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit):
        cli.main(["eval", "--method", "bogus"])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"methods": ["nope"]}))
    assert cli.main(["gen-data", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "unknown method" in capsys.readouterr().err
