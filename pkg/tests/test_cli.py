import json

import pytest

from mopgrnn.cli import main, read_csv, reduction, report_lines
from mopgrnn.config import OUTPUT_ROOT_ENV, load_config

TINY = {
    "system": "pendulum",
    "grid": {"duration": 0.3, "dt": 0.01},
    "data": {"train": [{"kind": "sine", "count": 3, "amplitude": [5, 10], "frequency": 1.0}],
             "val": [{"kind": "sine", "amplitude": 8, "frequency": 0.5}],
             "test": [{"kind": "sine", "count": 2, "amplitude": 8, "frequency": 0.7}]},
    "training": {"hidden_size": 3, "epochs": 2, "window": 10},
    "ensemble": {"seeds": [0, 1]},
    "counts": [1, 3],
    "output_dir": "out",
}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    return tmp_path


def write_config(path, cfg=TINY):
    path.write_text(json.dumps(cfg))
    return str(path)


def test_generate_counts_and_determinism(workdir, capsys):
    cfg = write_config(workdir / "c.json")
    assert main(["generate", cfg]) == 0
    assert "train: 3 samples" in capsys.readouterr().out
    out = workdir / "root" / "out" / "data"
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert set(first) == {"train.json", "val.json", "test.json"}
    assert len(json.loads(first["test.json"])["samples"]) == 2
    assert main(["generate", cfg]) == 0
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}


def test_malformed_json_reports_line(workdir, capsys):
    path = workdir / "bad.json"
    path.write_text('{"system": "pendulum",\n  "grid": }')
    assert main(["generate", str(path)]) == 2
    assert "line 2" in capsys.readouterr().err


@pytest.mark.parametrize("patch,field", [
    ({"system": "cartpole"}, "system"),
    ({"counts": [10]}, "counts"),
    ({"training": {"epochs": -1}}, "training"),
    ({"colour": "red"}, "colour"),
    ({"truth": {"m": 1.0}}, "truth"),
])
def test_config_field_errors(workdir, capsys, patch, field):
    assert main(["generate", write_config(workdir / "c.json", {**TINY, **patch})]) == 2
    assert repr(field) in capsys.readouterr().err


def test_defaults_are_resolved(workdir):
    cfg = load_config(write_config(workdir / "c.json"))
    assert cfg["training"]["lam"] == 0.5 and cfg["training"]["rho"] == 0.95
    assert cfg["truth"]["l"] == 0.045 and cfg["physics"]["l"] == 0.05
    assert cfg["kinds"] == ["phy", "rnn", "pgrnn", "mopgrnn"]


def test_train_requires_data(workdir, capsys):
    assert main(["train", write_config(workdir / "c.json"), "--kind", "rnn", "--count", "1"]) == 3
    assert "generate" in capsys.readouterr().err


def test_train_outputs(workdir):
    cfg = write_config(workdir / "c.json")
    main(["generate", cfg])
    run = workdir / "root" / "out" / "models"
    assert main(["train", cfg, "--kind", "phy", "--count", "1"]) == 0
    meta, rows = read_csv(run / "phy" / "n01" / "seed0" / "history.csv")
    assert meta["baseline"] is True and rows[0]["active"] == "baseline"

    assert main(["train", cfg, "--kind", "mopgrnn", "--count", "2", "--seed", "4"]) == 0
    d = run / "mopgrnn" / "n02" / "seed4"
    meta, rows = read_csv(d / "history.csv")
    assert meta["seed"] == 4 and meta["config"]["training"]["epochs"] == 2
    assert all(float(r["loss_energy"]) > 0 for r in rows)
    first = (d / "model.json").read_bytes(), (d / "history.csv").read_bytes()
    assert main(["train", cfg, "--kind", "mopgrnn", "--count", "2", "--seed", "4"]) == 0
    assert first == ((d / "model.json").read_bytes(), (d / "history.csv").read_bytes())
    assert main(["train", cfg, "--kind", "lstm", "--count", "2"]) == 2


def test_sweep_table_resume_and_report(workdir, capsys):
    cfg = write_config(workdir / "c.json")
    main(["generate", cfg])
    assert main(["sweep", cfg]) == 0
    out = workdir / "root" / "out"
    meta, rows = read_csv(out / "results.csv")
    assert meta["seeds"] == [0, 1]
    assert len(rows) == 4 * 2
    assert sum(r["kind"] == "phy" for r in rows) == 2
    phy = [r["mean_E_sim"] for r in rows if r["kind"] == "phy"]
    assert phy[0] == phy[1]
    for path in (out / "trajectories").iterdir():
        _, traj = read_csv(path)
        assert list(traj[0]) == ["t", "phi_true", "phidot_true", "phi_model", "phidot_model", "u",
                                 "dE_S", "dE_M", "delta"]
        assert all(float(r["delta"]) >= 0 for r in traj)

    table = (out / "results.csv").read_bytes()
    ckpt = out / "models" / "rnn" / "n03" / "seed1" / "model.json"
    stamp = ckpt.stat().st_mtime_ns
    assert main(["sweep", cfg]) == 0
    assert ckpt.stat().st_mtime_ns == stamp
    assert (out / "results.csv").read_bytes() == table

    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "n=1:" in text and "pgrnn vs rnn" in text


def test_rollout_command(workdir):
    cfg = write_config(workdir / "c.json")
    main(["generate", cfg])
    assert main(["rollout", cfg, "--kind", "pgrnn", "--count", "1"]) == 3
    main(["train", cfg, "--kind", "pgrnn", "--count", "1"])
    assert main(["rollout", cfg, "--kind", "pgrnn", "--count", "1", "--sample", "1"]) == 0
    meta, rows = read_csv(workdir / "root" / "out" / "models" / "pgrnn" / "n01" / "seed0" / "rollout_test1.csv")
    assert meta["sample"] == "sine-001" and len(rows) == 31


def test_report_reductions_and_missing_cells():
    assert reduction(1.0, 0.5) == 50.0
    rows = [{"kind": "rnn", "count": "3", "mean_E_sim": "1.0"},
            {"kind": "pgrnn", "count": "3", "mean_E_sim": "0.5"}]
    (line,) = report_lines(rows)
    assert "pgrnn vs rnn +50.0%" in line
    assert "pgrnn vs phy n/a" in line and "mopgrnn vs rnn n/a" in line


def test_report_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) != 0
    assert "results.csv" in capsys.readouterr().err


def test_report_missing_cell_exit_zero(tmp_path):
    (tmp_path / "results.csv").write_text('# {}\nkind,count,mean_E_sim\nrnn,3,1.0\n')
    assert main(["report", str(tmp_path)]) == 0
