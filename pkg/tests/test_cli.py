import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from flockjump.cli import SUBCOMMANDS, ConfigError, load_config, main


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def sidecar(out, name):
    return json.loads((out / f"{name}.json").read_text(encoding="utf-8"))


SIM = {"rate": {"kind": "step", "a": 2, "b": 1}, "law": {"kind": "exponential"}, "n": 50,
       "initial": {"kind": "iid", "family": "gaussian"}, "T": 2.0, "schedule": [0.5, 1.0],
       "seed": 7}


def test_wave_step(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"rate": {"kind": "step", "a": 3, "b": 1}})
    assert main(["wave", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert abs(summary["c"] - 2) < 1e-12 and abs(summary["K"] - 0.25) < 1e-12
    meta = sidecar(out, "wave")
    assert len(meta["config_hash"]) == 16 and meta["seed"] == 0
    header, data = read_csv(out / "wave.csv")
    assert header == ["x [length]", "rho [1/length]"]
    assert np.allclose(data[:, 1], 0.25 * np.exp(-np.abs(data[:, 0]) / 2), atol=1e-12)


def test_gap2_beta2(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"rate": {"kind": "exponential", "beta": 2.0},
                               "law": {"kind": "exponential"}})
    assert main(["gap2", "--config", cfg, "--out", str(out)]) == 0
    header, data = read_csv(out / "gap2.csv")
    assert header[0].startswith("g ")
    assert np.max(np.abs(data[:, 1] - 1 / np.cosh(data[:, 0]) ** 2)) < 1e-12


def test_gap2_birth_death(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"rate": {"kind": "step", "a": 2, "b": 1},
                               "law": {"kind": "deterministic"}})
    assert main(["gap2", "--config", cfg, "--out", str(out)]) == 0
    _, data = read_csv(out / "gap2.csv")
    assert abs(data[0, 1] - 1 / 3) < 1e-15 and abs(data[3, 1] - (2 / 3) / 8) < 1e-15


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as e:
        main(["dance", "--config", "x.json"])
    assert e.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_schema_errors_are_field_level(tmp_path, capsys):
    bad = dict(SIM, rate={"kind": "step", "a": -2, "b": 1}, n=0)
    cfg = write_cfg(tmp_path, bad)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "rate/a" in err and "n:" in err
    cfg = write_cfg(tmp_path, {"rate": {"kind": "step"}, "bogus": 1}, "b2.json")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o2")]) == 2
    assert "bogus" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="needs config fields"):
        load_config(write_cfg(tmp_path, {"rate": {"kind": "step", "a": 2, "b": 1}}, "b3.json"),
                    "simulate")
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["wave", "--config", str(tmp_path / "broken.json"),
                 "--out", str(tmp_path / "o3")]) == 2


def test_module_errors_propagate(tmp_path, capsys):
    cfg = write_cfg(tmp_path, dict(SIM, rate={"kind": "exponential", "beta": 1.0},
                                   method="thinning"))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "SimulationError" in capsys.readouterr().err


def test_simulate_rerun_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SIM)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    name = "trajectory_n50_r0.csv"
    raw = (a / name).read_bytes()
    assert raw == (b / name).read_bytes()
    assert b"\r\n" in raw
    header, data = read_csv(a / name)
    assert header[:3] == ["t [time]", "m_n [length]", "jumps [count]"]
    assert list(data[:, 0]) == [0.0, 0.5, 1.0, 2.0]
    meta = sidecar(a, "simulate")
    assert meta["seed"] == 7 and "created" in meta and meta["files"] == [name]
    assert meta["config_hash"] == sidecar(b, "simulate")["config_hash"]


def test_seed_override_and_nonempty_out(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SIM)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--seed", "8", "--out", str(b)]) == 0
    assert sidecar(b, "simulate")["seed"] == 8
    name = "trajectory_n50_r0.csv"
    assert (a / name).read_bytes() != (b / name).read_bytes()
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 2
    assert "not empty" in capsys.readouterr().err
    assert main(["simulate", "--config", cfg, "--seed", str(2**64), "--out",
                 str(tmp_path / "c")]) == 2


def test_meanfield(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"rate": {"kind": "step", "a": 2, "b": 1},
                               "law": {"kind": "exponential"},
                               "initial": {"kind": "iid", "family": "gaussian"},
                               "T": 1.0, "schedule": [0.5], "grid": {"dx": 0.0625}})
    assert main(["meanfield", "--config", cfg, "--out", str(out)]) == 0
    header, data = read_csv(out / "meanfield.csv")
    assert header[:3] == ["t [time]", "m [length]", "mdot [length/time]"]
    assert np.all((data[:, 2] >= 1) & (data[:, 2] <= 2))
    meta = sidecar(out, "meanfield")
    assert abs(meta["summary"]["max_step_mass_change"]) <= 1e-10
    assert len(meta["summary"]["log"]) == 3
    _, dens = read_csv(out / "density_t0.5.csv")
    assert abs(dens[:, 1].sum() * 0.0625 - 1) < 1e-10
    bad = write_cfg(tmp_path, {"rate": {"kind": "step", "a": 2, "b": 1},
                               "law": {"kind": "exponential"}, "initial": {"kind": "point"},
                               "T": 1.0, "grid": {"dx": 0.1}}, "bad.json")
    assert main(["meanfield", "--config", bad, "--out", str(tmp_path / "o2")]) == 2


def test_lattice3(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"rate": {"kind": "step", "a": 2, "b": 1},
                               "lattice": {"radius": 48}})
    assert main(["lattice3", "--config", cfg, "--out", str(out)]) == 0
    header, data = read_csv(out / "lattice3.csv")
    assert header[-1] == "pi [probability]"
    assert abs(data[:, 3].sum() - 1) < 1e-12
    assert np.all(data[:, :3].sum(axis=1) == 0)


def test_evt(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"evt": {"beta": 0.5, "n_samples": 500, "dt": 2.0,
                                       "replicas": 2}, "seed": 3})
    assert main(["evt", "--config", cfg, "--out", str(out)]) == 0
    meta = sidecar(out, "evt")
    s = meta["summary"]
    assert set(s) >= {"particle_vs_limit", "records_vs_limit", "records_vs_particle"}
    assert abs(s["c"] - 2 * math.exp(-0.42278433509846713)) < 1e-9  # 2 exp(-psi(2))
    _, data = read_csv(out / "evt_records.csv")
    assert data.shape == (1000, 3)


def test_compare_and_sweep(tmp_path):
    cfg_dict = {"rate": {"kind": "bounded_smooth", "a": 2, "b": 1, "shape": "logistic",
                         "a_prime": 1.0},
                "law": {"kind": "exponential"}, "n": [20, 80],
                "initial": {"kind": "iid", "family": "gaussian"}, "T": 1.0,
                "replicas": 2, "seed": 5, "grid": {"dx": 0.0625}}
    cfg = write_cfg(tmp_path, cfg_dict)
    a, b = tmp_path / "cmp", tmp_path / "swp"
    assert main(["compare", "--config", cfg, "--out", str(a)]) == 0
    assert main(["sweep", "--config", cfg, "--jobs", "2", "--out", str(b)]) == 0
    ha, da = read_csv(a / "compare.csv")
    hb, db = read_csv(b / "sweep.csv")
    assert ha == hb and ha[:3] == ["n [particles]", "t [time]", "seed [replica index]"]
    assert np.array_equal(da, db)  # parallel runs merge deterministically
    assert da.shape == (2 * 2 * 2, 6)
    jobs = sorted(p.name for p in (b / "jobs").iterdir())
    assert jobs == ["n20_r0.csv", "n20_r1.csv", "n80_r0.csv", "n80_r1.csv"]
    assert "slopes" in sidecar(a, "compare")["summary"]


def test_every_subcommand_has_parser_entry():
    for name in SUBCOMMANDS:
        with pytest.raises(SystemExit) as e:
            main([name, "--help"])
        assert e.value.code == 0


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, {"rate": {"kind": "step", "a": 3, "b": 1}})
    r = subprocess.run([sys.executable, "-m", "flockjump", "wave", "--config", cfg,
                        "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["K"] == pytest.approx(0.25)
