import csv
import warnings

import numpy as np
import pytest
import yaml

from apc.cli import main
from apc.harness import (
    METRIC_COLUMNS,
    ConfigError,
    emit_plot_data,
    evaluate_matchup,
    experiment,
    load_config,
    parse_config,
    prepare,
    run_experiment,
    run_seed,
    sweep_cd,
    train,
)
from apc.harness.config import preset_names


def ipgg_raw(**over):
    raw = {
        "name": "t",
        "environment": "ipgg",
        "agents": [{"learner": "tabular", "count": 5}],
        "mechanism": {"c": 0.7, "delta": 0.7, "window": 50, "collect_episodes": 20, "fit_steps": 500},
        "training": {"episodes": 40, "seeds": [0, 1]},
        "outputs": {"log_every": 1},
    }
    for key, value in over.items():
        section, field = key.split(".")
        raw[section][field] = value
    return raw


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- config ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "key, value, path",
    [
        ("mechanism.c", -0.1, "mechanism.c"),
        ("mechanism.delta", -1, "mechanism.delta"),
        ("mechanism.epsilon", -0.01, "mechanism.epsilon"),
        ("mechanism.window", 0, "mechanism.window"),
        ("mechanism.beta", 0.0, "mechanism.beta"),
        ("training.seeds", [], "training.seeds"),
        ("training.gamma", 1.0, "training.gamma"),
        ("outputs.log_every", 0, "outputs.log_every"),
    ],
)
def test_invalid_field_is_rejected_with_path(key, value, path):
    with pytest.raises(ConfigError) as err:
        parse_config(ipgg_raw(**{key: value}))
    assert err.value.path == path
    assert path in str(err.value)


def test_structural_config_errors():
    with pytest.raises(ConfigError, match="environment.name"):
        parse_config({**ipgg_raw(), "environment": "chess"})
    with pytest.raises(ConfigError, match="bogus"):
        parse_config({**ipgg_raw(), "bogus": 1})
    raw = ipgg_raw()
    raw["agents"] = [{"learner": "tabular", "count": 4}]
    raw["environment"] = "ssh"
    with pytest.raises(ConfigError, match=r"agents\[0\].learner"):
        parse_config(raw)


def test_presets_load_with_shipped_values():
    names = preset_names()
    assert {"ipgg", "coin", "ssg", "ssh", "foraging", "mipgg", "mssh"} <= set(names)
    for name in names:
        load_config(name)
    expected = {"ipgg": 0.7, "coin": 1.1, "ssg": 2.1, "ssh": 0.4, "foraging": 0.7}
    for name, v in expected.items():
        m = load_config(name).mechanism
        assert (m.c, m.delta) == (v, v)
    assert load_config("ipgg").training.episodes == 5000
    assert load_config("ssh").training.episodes == 30000


def test_replace_revalidates():
    cfg = parse_config(ipgg_raw())
    assert cfg.replace(**{"mechanism.c": 0.3}).mechanism.c == 0.3
    with pytest.raises(ConfigError):
        cfg.replace(**{"mechanism.c": -1.0})


# -- runs -----------------------------------------------------------------------


def test_run_experiment_outputs(tmp_path):
    res = run_experiment(parse_config(ipgg_raw()), tmp_path)
    assert len(res.metric_files) == 2
    for path in res.metric_files:
        raw = path.read_bytes()
        assert b"\r\n" not in raw
        header = raw.decode("utf-8").splitlines()[0].split(",")
        assert tuple(header) == METRIC_COLUMNS
        assert len(read_rows(path)) == 40
    assert (res.directory / "summary.json").exists()
    final = res.summary["final"]
    assert set(final["cooperation_rate"]) >= {"mean", "std"}
    assert (res.directory / "checkpoints" / "t-s0" / "agent0.npz").exists()
    assert (res.directory / "t-s1.windows.csv").exists()


def test_same_config_gives_byte_identical_csvs(tmp_path):
    cfg = parse_config(ipgg_raw())
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    for fa, fb in zip(a.metric_files, b.metric_files):
        assert fa.read_bytes() == fb.read_bytes()


def test_parallel_workers_match_serial(tmp_path):
    cfg = parse_config(ipgg_raw())
    a = run_experiment(cfg, tmp_path / "serial")
    b = run_experiment(cfg, tmp_path / "pool", workers=2)
    for fa, fb in zip(a.metric_files, b.metric_files):
        assert fa.read_bytes() == fb.read_bytes()


def test_grid_runs_are_deterministic(tmp_path):
    raw = {
        "name": "g",
        "environment": "coin",
        "agents": [{"learner": "a2c", "count": 2}],
        "mechanism": {"c": 1.1, "delta": 1.1, "collect_episodes": 3, "fit_steps": 50, "buffer_capacity": 2000},
        "training": {"episodes": 3, "seeds": [4]},
    }
    cfg = parse_config(raw)
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    assert a.metric_files[0].read_bytes() == b.metric_files[0].read_bytes()


def test_accounting_rederivable_from_telemetry():
    # window == horizon, so every window report covers exactly one episode
    cfg = parse_config(ipgg_raw(**{"training.episodes": 30}))
    run = run_seed(cfg, 0)
    assert len(run.rows) == len(run.reports) == 30
    c, d = cfg.mechanism.c, cfg.mechanism.delta
    punished = 0
    for row, rep in zip(run.rows, run.reports):
        W = rep.weight_sum
        expected = row.raw_return - c * W.sum(axis=1) - d * W.sum(axis=0)
        np.testing.assert_allclose(row.total_return, expected, atol=1e-9)
        assert row.collective_reward == pytest.approx(row.raw_return.sum())
        punished += W.sum() > 0
    assert punished > 0


def test_phase_isolation():
    cfg = parse_config(ipgg_raw(**{"training.episodes": 30}))
    run = prepare(cfg, 0)
    before = {
        (a.index, j): m.all_keys_harm().copy() for a in run.agents for j, m in a.bundle.harm_models.items()
    }
    assert all(m.frozen for a in run.agents for m in a.bundle.harm_models.values())
    train(cfg, run.game, run.agents, run)
    for a in run.agents:
        for j, m in a.bundle.harm_models.items():
            assert np.array_equal(before[(a.index, j)], m.all_keys_harm())


def test_failure_flushes_partial_logs(tmp_path, monkeypatch):
    real = experiment.train

    def broken(cfg, game, agents, run, episodes=None):
        real(cfg, game, agents, run, 5)
        raise RuntimeError("worker died")

    monkeypatch.setattr(experiment, "train", broken)
    cfg = parse_config(ipgg_raw(**{"training.seeds": [0]}))
    with pytest.raises(RuntimeError):
        run_experiment(cfg, tmp_path)
    rows = read_rows(tmp_path / "runs" / "t" / "t-s0.csv")
    assert len(rows) == 5


def test_env_var_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("APC_OUTPUT_ROOT", str(tmp_path))
    res = run_experiment(parse_config(ipgg_raw(**{"training.seeds": [0], "training.episodes": 2})))
    assert res.directory == tmp_path / "runs" / "t"


# -- sweep ----------------------------------------------------------------------


def test_sweep_matrix_shape_and_cells(tmp_path):
    cfg = parse_config(ipgg_raw(**{"training.seeds": [0], "training.episodes": 30}))
    res = sweep_cd(cfg, (0.0, 0.7, 1.4), (0.2, 0.7), out=tmp_path / "sweep_cd.csv")
    assert res.rates.shape == (2, 3)
    rows = read_rows(tmp_path / "sweep_cd.csv")
    assert len(rows) == 2 and len(rows[0]) == 4
    alone = run_seed(cfg.replace(**{"mechanism.c": 1.4, "mechanism.delta": 0.2, "outputs.windows": False}), 0)
    assert res.rate(1.4, 0.2) == alone.final()["contribution_probability"]
    with pytest.raises(ValueError):
        sweep_cd(cfg, (), (0.1,))


# -- matchups -------------------------------------------------------------------


def test_matchup_against_cooperators_spares_them(tmp_path):
    cfg = parse_config(ipgg_raw(**{"training.seeds": [0], "training.episodes": 20}))
    res = evaluate_matchup(cfg, "always_cooperate", episodes=15, out=tmp_path)
    assert len(res.curves) == 15
    assert np.all(res.punishments == 0)
    assert (tmp_path / "matchup_always_cooperate.csv").exists()


def test_matchup_against_defectors_decays_probability():
    cfg = parse_config(ipgg_raw(**{"training.seeds": [0], "training.episodes": 20}))
    res = evaluate_matchup(cfg, "always_defect", episodes=25)
    p = res.probability
    assert np.all(np.diff(p[2:]) <= 1e-12)
    assert p[-1] < 0.2


def test_checkpoint_mismatch_is_rejected(tmp_path):
    cfg = parse_config(ipgg_raw(**{"training.seeds": [0], "training.episodes": 2}))
    res = run_experiment(cfg, tmp_path)
    ckpt = res.directory / "checkpoints" / "t-s0"
    other = load_config("mipgg").replace(**{"training.seeds": [0]})
    with pytest.raises(ValueError, match="does not match"):
        evaluate_matchup(other, "always_defect", episodes=2, checkpoint_dir=ckpt)
    grid = load_config("coin").replace(**{"training.seeds": [0]})
    with pytest.raises(ValueError):
        evaluate_matchup(grid, "always_defect", episodes=2, checkpoint_dir=ckpt)


def test_matchup_from_checkpoint_reuses_frozen_models(tmp_path):
    cfg = parse_config(ipgg_raw(**{"training.seeds": [0], "training.episodes": 10}))
    res = run_experiment(cfg, tmp_path)
    a = evaluate_matchup(cfg, "always_defect", episodes=5, checkpoint_dir=res.directory / "checkpoints" / "t-s0")
    b = evaluate_matchup(cfg, "always_defect", episodes=5, checkpoint_dir=res.directory / "checkpoints" / "t-s0")
    assert a.curves == b.curves
    with pytest.raises(ValueError, match="unknown opponent"):
        evaluate_matchup(cfg, "tit_for_tat", episodes=1, checkpoint_dir=res.directory / "checkpoints" / "t-s0")


# -- plot data ------------------------------------------------------------------


def test_emit_plot_data(tmp_path):
    cfg = parse_config(ipgg_raw(**{"training.episodes": 10}))
    res = run_experiment(cfg, tmp_path)
    sweep_cd(cfg.replace(**{"training.seeds": [0]}), (0.0, 0.7), (0.7,), out=res.directory / "sweep_cd.csv")
    for opp in ("always_defect", "random"):
        evaluate_matchup(cfg, opp, episodes=3, out=res.directory)
    written = {p.name: p for p in emit_plot_data(res.directory)}
    curve = read_rows(written["curve_collective_reward.csv"])
    assert list(curve[0]) == ["episode", "mean", "std"] and len(curve) == 10
    heat = read_rows(written["heatmap_sweep_cd.csv"])
    assert len(heat) == 1 and len(heat[0]) == 3
    series = {r["opponent"] for r in read_rows(written["matchup_curves.csv"])}
    assert series == {"always_defect", "random"}


def test_emit_plot_data_empty_dir_warns(tmp_path):
    with pytest.warns(UserWarning, match="no metrics"):
        assert emit_plot_data(tmp_path) == []


# -- CLI ------------------------------------------------------------------------


def write_yaml(path, raw):
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    good = write_yaml(tmp_path / "good.yaml", ipgg_raw(**{"training.seeds": [0], "training.episodes": 3}))
    bad = write_yaml(tmp_path / "bad.yaml", ipgg_raw(**{"mechanism.window": 0}))
    assert main(["validate", "ipgg"]) == 0
    assert main(["validate", good]) == 0
    assert main(["validate", bad]) == 2
    assert "mechanism.window" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "missing.yaml")]) == 2
    assert main(["run", good, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "runs" / "t" / "t-s0.csv").exists()
    ckpt = tmp_path / "o" / "runs" / "t" / "checkpoints" / "t-s0"
    assert main(["matchup", "mipgg", "--opponent", "random", "--episodes", "1", "--checkpoint", str(ckpt)]) == 1
    assert main(["sweep", good, "--c-grid", "0,x", "--out", str(tmp_path)]) == 2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert main(["plots", str(tmp_path / "o" / "runs" / "t")]) == 0


def test_cli_sweep_writes_matrix(tmp_path):
    good = write_yaml(tmp_path / "good.yaml", ipgg_raw(**{"training.seeds": [0], "training.episodes": 3}))
    assert main(["sweep", good, "--c-grid", "0,0.7", "--d-grid", "0.7", "--out", str(tmp_path)]) == 0
    assert len(read_rows(tmp_path / "runs" / "t" / "sweep_cd.csv")) == 1
