import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermoform_mpc import persist
from thermoform_mpc.cli import main
from thermoform_mpc.config import KINDS, parse_config, parse_config_text, serialize_config
from thermoform_mpc.excitation import PrbsSchedule
from thermoform_mpc.experiments import (
    SIM_REFERENCE, compute_metrics, read_metrics_csv, read_trajectory,
)
from thermoform_mpc.mpc import MpcConfig
from thermoform_mpc.narx import Dataset, NarxModel
from thermoform_mpc.thermal_sim import ConfigError, PlantConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


# --- config files -----------------------------------------------------------------------

def test_empty_plant_config_gives_defaults():
    cfg = parse_config_text("", "plant")
    assert cfg == PlantConfig()
    assert cfg.material.rho == 1380.0 and cfg.geometry.gap_d == 0.15
    assert cfg.env.T_amb == 294.15


def test_invalid_value_names_the_key_and_line():
    with pytest.raises(ConfigError, match=r"<config>:2: rho must be positive"):
        parse_config_text("cp = 1465\nrho = -1\n", "plant")


@pytest.mark.parametrize("text, pattern", [
    ("bogus = 1", r":1: unknown key 'bogus'"),
    ("rho = 1\nrho = 2", r":2: key 'rho' repeated"),
    ("rho = abc", r":1: key 'rho'"),
    ("Nx = 2.5", r":1: key 'Nx'"),
    ("radiation = maybe", r":1: key 'radiation'"),
    ("just words", r":1: expected 'key = value'"),
    ("kind = mpc", r"expected a 'plant' config"),
])
def test_config_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config_text(text, "plant")


def test_values_comments_and_types():
    cfg = parse_config_text("# header\ngap_d = 0.2  # metres\nradiation = off\nNx = 60\n", "plant")
    assert cfg.geometry.gap_d == 0.2 and cfg.radiation is False and cfg.geometry.Nx == 60
    grid = parse_config_text("h = 5, 8\nd = 0.15\nalpha = 0.8", "grid")
    assert grid.h == (5.0, 8.0) and grid.d == (0.15,)


@pytest.mark.parametrize("kind", sorted(KINDS))
def test_serialize_roundtrip(kind):
    cfg = KINDS[kind]()
    assert parse_config_text(serialize_config(cfg)) == cfg


@settings(max_examples=40, deadline=None)
@given(Np=st.integers(1, 60), frac=st.floats(0.01, 1.0), beta=st.floats(1e-4, 0.5),
       T_over=st.floats(0.0, 10.0), bias=st.booleans())
def test_mpc_config_roundtrip(Np, frac, beta, T_over, bias):
    cfg = MpcConfig(Np=Np, Nc=max(1, int(frac * Np)), beta=beta, T_over=T_over,
                    bias_correction=bias)
    assert parse_config_text(serialize_config(cfg), "mpc") == cfg


def test_checked_in_configs_are_the_defaults():
    for kind, cls in KINDS.items():
        assert parse_config(CONFIGS / f"{kind}.cfg", kind) == cls()


# --- CLI ------------------------------------------------------------------------------

def test_unknown_flag_and_command_exit_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["excite", "--no-such-flag"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["levitate"])
    assert e.value.code == 2


def test_bad_config_exits_1_with_message(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("kind = prbs\nsegment_duration = -5\n")
    assert main(["excite", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "thermoform excite: error:" in err and "segment_duration" in err


def test_missing_required_input_exits_1(tmp_path, capsys):
    assert main(["fit", "--out-dir", str(tmp_path)]) == 1
    assert "--dataset is required" in capsys.readouterr().err


def test_metrics_subcommand_equals_compute_metrics(tmp_path, capsys):
    t = 6.0 * np.arange(20)
    rng = np.random.default_rng(0)
    Y = SIM_REFERENCE + rng.normal(0, 4, (20, 15))
    traj = tmp_path / "traj.csv"
    cols = ["t"] + [f"y{i}" for i in range(1, 16)] + [f"r{i}" for i in range(1, 16)] \
        + [f"u{i}" for i in range(1, 16)]
    persist._write_table(traj, "# deg C", cols,
                         np.column_stack([t, Y, np.tile(SIM_REFERENCE, (20, 1)), np.zeros((20, 15))]))
    out = tmp_path / "m"
    assert main(["metrics", "--trajectory", str(traj), "--out-dir", str(out),
                 "--band", "5", "--duration", "90"]) == 0
    row = read_metrics_csv(out / "metrics.csv")[0]
    m = compute_metrics(t, Y, SIM_REFERENCE, band=5.0, t_f=90.0).as_dict()
    for k, v in m.items():
        assert row[k] == v
    assert "avg final error" in capsys.readouterr().out


def hashes(paths):
    return {p.name: persist.file_hash(p) for p in paths}


def test_short_pipeline(tmp_path, capsys):
    """excite -> collect -> fit -> validate -> control -> metrics on a shortened schedule."""
    prbs = tmp_path / "prbs.cfg"
    prbs.write_text(serialize_config(PrbsSchedule(segment_duration=720.0)))
    fit_cfg = tmp_path / "fit.cfg"
    fit_cfg.write_text("kind = fit\nunit_counts = 0, 10\n")
    mpc_cfg = tmp_path / "mpc.cfg"
    mpc_cfg.write_text("kind = mpc\nNp = 10\nNc = 2\n")
    plant_cfg = CONFIGS / "plant.cfg"
    r = {k: tmp_path / k for k in ("ex", "col", "fit", "val", "ctl", "met")}

    assert main(["excite", "--config", str(prbs), "--out-dir", str(r["ex"]), "--seed", "4"]) == 0
    exc = r["ex"] / "excitation.csv"
    U, dt = persist.read_excitation(exc)
    assert U.shape == (1200, 15) and dt == 6.0

    assert main(["collect", "--excitation", str(exc), "--plant-config", str(plant_cfg),
                 "--out-dir", str(r["col"])]) == 0
    ds = r["col"] / "dataset.csv"
    data = persist.read_dataset(ds)
    assert isinstance(data, Dataset) and len(data.Y) == 1200

    assert main(["fit", "--dataset", str(ds), "--config", str(fit_cfg),
                 "--out-dir", str(r["fit"])]) == 0
    model_path = r["fit"] / "model.txt"
    NarxModel.load(model_path)

    before = hashes([exc, ds, model_path])
    capsys.readouterr()
    assert main(["validate", "--dataset", str(ds), "--model", str(model_path),
                 "--out-dir", str(r["val"])]) == 0
    printed = capsys.readouterr().out
    assert "N=1" in printed and "N=100" in printed
    table = persist.read_columns(r["val"] / "fit_table.csv", ["zone"])[0]
    assert len(table) == 15

    assert main(["control", "--model", str(model_path), "--config", str(mpc_cfg),
                 "--duration", "60", "--out-dir", str(r["ctl"])]) == 0
    traj = r["ctl"] / "trajectory.csv"
    t, Y, R, _ = read_trajectory(traj)
    assert len(t) == 11 and np.all(R == SIM_REFERENCE)

    assert main(["metrics", "--trajectory", str(traj), "--out-dir", str(r["met"])]) == 0
    a = read_metrics_csv(r["ctl"] / "metrics.csv")[0]
    b = read_metrics_csv(r["met"] / "metrics.csv")[0]
    assert {k: a[k] for k in ("avg_err", "max_err", "overshoot", "settling")} == \
           {k: b[k] for k in ("avg_err", "max_err", "overshoot", "settling")}

    # inputs were never modified
    assert hashes([exc, ds, model_path]) == before

    # manifests record inputs, outputs, seeds and configs
    man = persist.RunManifest.read(r["ex"] / "manifest.json")
    assert man.seeds == {"prbs": 4} and str(exc) in man.outputs and "prbs" in man.config_hashes
    man = persist.RunManifest.read(r["ctl"] / "manifest.json")
    assert str(model_path) in man.inputs and man.verify() == []
    assert set(json.loads((r["fit"] / "manifest.json").read_text())) >= {
        "command", "argv", "seeds", "config_hashes", "inputs", "outputs", "timings", "versions"}

    # an identical rerun reproduces every output byte for byte
    rerun = tmp_path / "col2"
    assert main(["collect", "--excitation", str(exc), "--plant-config", str(plant_cfg),
                 "--out-dir", str(rerun)]) == 0
    assert persist.file_hash(rerun / "dataset.csv") == persist.file_hash(ds)
    assert main(["excite", "--config", str(prbs), "--out-dir", str(tmp_path / "ex2"),
                 "--seed", "4"]) == 0
    assert persist.file_hash(tmp_path / "ex2" / "excitation.csv") == persist.file_hash(exc)


def test_reference_file(tmp_path):
    ref = tmp_path / "ref.csv"
    persist.write_reference(ref, SIM_REFERENCE)
    np.testing.assert_array_equal(persist.read_reference(ref), SIM_REFERENCE)
    ref.write_text("r1,r2\n1,2\n")
    with pytest.raises(persist.FileFormatError):
        persist.read_reference(ref)


def test_dataset_file_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    d = Dataset(6.0, rng.uniform(0, 500, (7, 15)), rng.uniform(20, 200, (7, 15)))
    p = tmp_path / "d.csv"
    persist.write_dataset(p, d)
    back = persist.read_dataset(p)
    np.testing.assert_array_equal(back.U, d.U)
    np.testing.assert_array_equal(back.Y, d.Y)
    assert back.dt == 6.0
    assert b"\r" not in p.read_bytes()
