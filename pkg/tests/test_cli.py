import numpy as np
import pytest

from graphfolio import agent as agent_mod
from graphfolio import cli
from graphfolio.config import ConfigError, parse_config
from graphfolio.synth import SynthSpec, generate

RUN_INI = """\
[run]
seed = 3
out_dir = {out}

[data]
data_dir = {data}
train_start = 2010-01-04
train_end = 2010-07-30
test_start = 2010-08-02
test_end = 2010-08-20

[model]
window = 10
corr_window = 5

[training]
span = 10
epochs = 1
batches_per_epoch = 2

[synth]
assets = 3
days = 170
drift = 0.001
volatility = 0.01
correlation = 0.3
"""


@pytest.fixture
def workspace(tmp_path):
    data, out = tmp_path / "data", tmp_path / "out"
    ini = tmp_path / "run.ini"
    ini.write_text(RUN_INI.format(out=out, data=data))
    assert cli.main(["synth", "--config", str(ini), "--out", str(data)]) == 0
    return ini, data, out


def test_parse_defaults_and_overrides():
    cfg = parse_config("[run]\nseed = 9\n[model]\nuse_gcn = no\nfeature_clip = none\n")
    assert cfg.seed == 9 and cfg.train.use_gcn is False and cfg.train.feature_clip is None
    assert cfg.train.window == 30 and cfg.dataset_split() is None
    again = parse_config(cfg.to_ini())
    assert again == cfg


def test_parse_rejects_unknown_and_bad_values():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[model]\nwindw = 3\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[modle]\nwindow = 3\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("[training]\nepochs = many\n")
    with pytest.raises(ConfigError, match="gamma"):
        parse_config("[model]\ngamma = 1.5\n")
    with pytest.raises(ConfigError, match="either split"):
        parse_config("[data]\nsplit = 1\ntrain_start = 2001-01-01\n")


def test_usage_errors_exit_one(capsys):
    assert cli.main([]) == 1
    assert cli.main(["train"]) == 1
    assert cli.main(["fly", "--config", "x"]) == 1
    assert cli.main(["train", "--config", "/nonexistent/run.ini"]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_data_exits_two(tmp_path):
    ini = tmp_path / "r.ini"
    ini.write_text(f"[data]\ndata_dir = {tmp_path / 'nothing'}\n")
    assert cli.main(["ingest", "--config", str(ini)]) == 2


def test_full_pipeline_and_reports(workspace, capsys):
    ini, data, out = workspace
    assert cli.main(["ingest", "--config", str(ini)]) == 0
    assert "train 2010-01-04" in capsys.readouterr().out
    nested = out / "deep" / "new"
    assert cli.main(["train", "--config", str(ini), "--out", str(nested)]) == 0
    for name in ("checkpoint.txt", "train_log.csv", "batches.csv", "train.effective.ini"):
        assert (nested / name).exists(), name
    log = (nested / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,delta,critic_loss,actor_grad_norm,reward" and len(log) == 1 + 2 * 9
    assert cli.main(["backtest", "--config", str(ini), "--out", str(nested)]) == 0
    metrics = (nested / "metrics.txt").read_text()
    assert metrics.startswith("days 15\n")
    capsys.readouterr()
    assert cli.main(["report", "--out", str(nested)]) == 0
    assert "sharpe" in capsys.readouterr().out


def test_reruns_are_byte_identical(workspace):
    ini, data, out = workspace
    dirs = [out / "a", out / "b"]
    for d in dirs:
        assert cli.main(["train", "--config", str(ini), "--out", str(d)]) == 0
        assert cli.main(["backtest", "--config", str(ini), "--out", str(d)]) == 0
    for name in ("checkpoint.txt", "train_log.csv", "batches.csv", "report.csv", "weights.csv", "metrics.txt"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name


def test_seed_override_changes_checkpoint(workspace):
    ini, data, out = workspace
    assert cli.main(["train", "--config", str(ini), "--out", str(out / "s3")]) == 0
    assert cli.main(["train", "--config", str(ini), "--out", str(out / "s4"), "--seed", "4"]) == 0
    assert (out / "s3" / "checkpoint.txt").read_bytes() != (out / "s4" / "checkpoint.txt").read_bytes()


def test_backtest_without_checkpoint_exits_two(workspace, capsys):
    ini, data, out = workspace
    assert cli.main(["backtest", "--config", str(ini), "--out", str(out / "empty")]) == 2
    assert "no such checkpoint" in capsys.readouterr().err


def test_mismatched_checkpoint_names_field(workspace, tmp_path, capsys):
    ini, data, out = workspace
    assert cli.main(["train", "--config", str(ini)]) == 0
    other = tmp_path / "other.ini"
    other.write_text(ini.read_text().replace("window = 10", "window = 12"))
    assert cli.main(["backtest", "--config", str(other), "--checkpoint", str(out / "checkpoint.txt")]) == 2
    assert "window" in capsys.readouterr().err


def test_report_without_backtest_exits_two(tmp_path):
    assert cli.main(["report", "--out", str(tmp_path)]) == 2


def test_numerical_abort_exits_three_and_keeps_log(workspace, monkeypatch, capsys):
    ini, data, out = workspace
    real = agent_mod.train_step
    calls = [0]

    def flaky(agent, tr, gamma=None):
        calls[0] += 1
        if calls[0] == 4:
            nan = float("nan")
            raise agent_mod.NumericalError("injected", agent_mod.StepDiagnostics(nan, nan, nan, nan, nan,
                                                                                   0.0, 0.0, 0.0))
        return real(agent, tr, gamma)

    import graphfolio.backtest as bt

    monkeypatch.setattr(bt, "train_step", flaky)
    assert cli.main(["train", "--config", str(ini)]) == 3
    assert "diagnostics" in capsys.readouterr().err
    assert len((out / "train_log.csv").read_text().splitlines()) == 1 + 3


def test_synth_correlation_and_flat_prices():
    series = generate(SynthSpec(assets=2, days=1000, correlation=0.9), seed=0)
    r = [np.diff(np.log(s.close)) for s in series]
    assert abs(np.corrcoef(r)[0, 1] - 0.9) < 0.1
    flat = generate(SynthSpec(assets=3, days=50, volatility=0.0), seed=0)
    for s in flat:
        assert np.all(s.close == s.close[0]) and np.all(s.high >= s.low)


def test_synth_rejects_impossible_correlation():
    with pytest.raises(ValueError):
        generate(SynthSpec(assets=3, correlation=-0.6), seed=0)
