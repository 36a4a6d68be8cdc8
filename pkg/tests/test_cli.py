import csv
import json

import numpy as np
import pytest

from mrxcs import cli, io
from mrxcs.config import ConfigError, ExperimentConfig, load_config, parse_config
from mrxcs.solvers import SolverError

DESK = {
    "seed": 0,
    "geometry": {"n_per_side": 25, "sensors_per_layer": 20, "n_coils": 60},
    "phantom": "tumor",
    "noise": {"snr_db": 80},
    "sensing": {"scheme": "deterministic", "m": 40},
    "solver": {"method": "douglas_rachford", "mu": 4e-13, "alpha": 1e-14, "s": 1.0,
               "n_max": 1.0, "n_iter": 50},
}


@pytest.fixture(scope="module")
def cache_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("cache"))


def write_cfg(path, cache_dir, **changes):
    raw = json.loads(json.dumps(DESK))
    for key, val in changes.items():
        if isinstance(val, dict) and isinstance(raw.get(key), dict):
            raw[key].update(val)
        else:
            raw[key] = val
    raw["cache_dir"] = cache_dir
    path.write_text(json.dumps(raw))
    return str(path)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# --- config parsing ---------------------------------------------------------


def test_defaults_and_roundtrip():
    cfg = parse_config({})
    assert cfg == ExperimentConfig()
    full = parse_config(DESK)
    assert parse_config(full.to_dict()) == full
    assert parse_config({"noise": {"snr_db": "inf"}}).snr_db == float("inf")


@pytest.mark.parametrize("raw", [
    {"solver": {"method": "admm"}},
    {"solver": {"s": 2.5}},
    {"solver": {"mu": -1}},
    {"phantom": "brain"},
    {"sensing": {"scheme": "hadamard"}},
    {"sensing": {"m": 500}},
    {"sensing": {"noise_placement": "sensor"}},
    {"geometry": {"n_coil": 4}},
    {"noise": {"snr_db": "loud"}},
    {"seed": -1},
    {"sweep": {"m_values": []}},
    {"schema_version": 2},
    {"colour": "blue"},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_stage_seeds():
    cfg = parse_config({"seed": 10, "sensing": {"seed": 99}})
    assert cfg.stage_seed("noise") == 11
    assert cfg.stage_seed("activation") == 99
    assert cfg.with_seed(3).stage_seed("noise") == 4


def test_load_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


# --- command line -----------------------------------------------------------


def test_run_produces_artifacts(tmp_path, cache_dir, capsys):
    cfg = write_cfg(tmp_path / "c.json", cache_dir)
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"phantom.pgm", "phantom.csv", "data.csv", "activation.csv", "recon.pgm", "recon.csv",
            "trace.csv", "metrics.csv", "metrics.json", "manifest.json", "timings.json"} <= names
    rows = read_rows(out / "metrics.csv")
    assert len(rows) == 1 and rows[0]["m"] == "40" and rows[0]["method"] == "douglas_rachford"
    man = json.loads((out / "manifest.json").read_text())
    for name, digest in man["artifacts"].items():
        assert io.sha256_file(out / name) == digest
    assert len(read_rows(out / "trace.csv")) == 50
    recon = io.read_vector_csv(out / "recon.csv")
    assert recon.min() >= 0.0 and recon.max() <= 1.0
    assert json.loads(capsys.readouterr().out)["status"] == "ok"


def test_run_is_deterministic(tmp_path, cache_dir):
    cfg = write_cfg(tmp_path / "c.json", cache_dir, sensing={"scheme": "gaussian", "m": 10})
    for d in ("a", "b"):
        assert cli.main(["run", cfg, "--out", str(tmp_path / d), "--quiet"]) == 0
    for name in json.loads((tmp_path / "a" / "manifest.json").read_text())["artifacts"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert ((tmp_path / "a" / "manifest.json").read_bytes()
            == (tmp_path / "b" / "manifest.json").read_bytes())


def test_seed_override(tmp_path, cache_dir):
    cfg = write_cfg(tmp_path / "c.json", cache_dir, sensing={"scheme": "gaussian", "m": 10})
    assert cli.main(["run", cfg, "--out", str(tmp_path / "a"), "--quiet", "--seed", "5"]) == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seeds"] == {"master": 5, "noise": 6, "activation": 7, "compressed_noise": 8}


def test_validation_error_exit_code(tmp_path, cache_dir, capsys):
    cfg = write_cfg(tmp_path / "c.json", cache_dir, solver={"method": "admm"})
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["kind"] == "validation"
    assert not out.exists()
    assert list(tmp_path.iterdir()) == [tmp_path / "c.json"]


def test_missing_config_exit_code(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.json"), "--quiet"]) == 2


def test_numerical_failure_exit_code(tmp_path, cache_dir, monkeypatch, capsys):
    cfg = write_cfg(tmp_path / "c.json", cache_dir)

    def boom(*args, **kwargs):
        raise SolverError("factorization failed")

    monkeypatch.setattr(cli, "douglas_rachford_solve", boom)
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out), "--quiet"]) == 3
    assert json.loads(capsys.readouterr().err.strip())["kind"] == "numerical"
    # staged partial output is removed
    assert not out.exists()
    assert [p.name for p in tmp_path.iterdir()] == ["c.json"]


def test_sweep_cardinality(tmp_path, cache_dir):
    cfg = write_cfg(tmp_path / "c.json", cache_dir,
                    sweep={"m_values": [10, 20, 40], "schemes": ["deterministic", "bernoulli"]})
    assert cli.main(["sweep", cfg, "--out", str(tmp_path / "s"), "--quiet"]) == 0
    rows = read_rows(tmp_path / "s" / "sweep.csv")
    assert len(rows) == 6
    assert all(r["status"] == "ok" for r in rows)


def test_sweep_full_sampling_matches_full_run(tmp_path, cache_dir):
    cfg = write_cfg(tmp_path / "c.json", cache_dir, sweep={"m_values": [60]})
    assert cli.main(["sweep", cfg, "--out", str(tmp_path / "s"), "--quiet"]) == 0
    full = write_cfg(tmp_path / "f.json", cache_dir, sensing={"m": None})
    assert cli.main(["run", full, "--out", str(tmp_path / "f"), "--quiet"]) == 0
    row = read_rows(tmp_path / "s" / "sweep.csv")[0]
    ref = json.loads((tmp_path / "f" / "metrics.json").read_text())
    assert float(row["relative_rmse"]) == pytest.approx(ref["relative_rmse"], rel=1e-6)


def test_sweep_flags_failing_point(tmp_path, cache_dir):
    cfg = write_cfg(tmp_path / "c.json", cache_dir, sweep={"m_values": [10, 61]})
    assert cli.main(["sweep", cfg, "--out", str(tmp_path / "s"), "--quiet"]) == 0
    rows = read_rows(tmp_path / "s" / "sweep.csv")
    assert [r["status"] for r in rows] == ["ok", "failed"]


def test_sweep_plateau(tmp_path, cache_dir):
    """Tumor: RMSE at the largest m lies within 5% of RMSE at m = 30."""
    cfg = write_cfg(tmp_path / "c.json", cache_dir, sweep={"m_values": [30, 40, 50, 60]})
    assert cli.main(["sweep", cfg, "--out", str(tmp_path / "s"), "--quiet"]) == 0
    rmse = {int(r["m"]): float(r["relative_rmse"]) for r in read_rows(tmp_path / "s" / "sweep.csv")}
    assert abs(rmse[60] - rmse[30]) <= 0.05 * rmse[30]


def test_compressed_noise_placement(tmp_path, cache_dir):
    cfg = write_cfg(tmp_path / "c.json", cache_dir,
                    sensing={"scheme": "gaussian", "m": 10, "noise_placement": "compressed"})
    assert cli.main(["run", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 0
    data = io.read_vector_csv(tmp_path / "o" / "data.csv")
    assert data.size == 10 * 40


def test_leadfield_cache_and_csv(tmp_path, cache_dir):
    cfg = write_cfg(tmp_path / "c.json", cache_dir)
    assert cli.main(["leadfield", cfg, "--out", str(tmp_path / "l"), "--quiet", "--csv"]) == 0
    mat = io.read_matrix_csv(tmp_path / "l" / "leadfield.csv")
    assert mat.shape == (2400, 625)
    lead, hit = cli.load_lead_field(load_config(cfg))
    assert hit
    assert np.array_equal(lead.matrix, mat)


def test_spectrum_and_lcurve(tmp_path, cache_dir):
    cfg = write_cfg(tmp_path / "c.json", cache_dir,
                    sweep={"m_values": [10], "mu_grid": [10.0 ** e for e in range(-15, -5)]})
    assert cli.main(["spectrum", cfg, "--out", str(tmp_path / "sp"), "--quiet"]) == 0
    sv = [float(r["sigma"]) for r in read_rows(tmp_path / "sp" / "spectrum.csv")]
    assert len(sv) == 625 and sv == sorted(sv, reverse=True)
    assert cli.main(["lcurve", cfg, "--out", str(tmp_path / "lc"), "--quiet"]) == 0
    rows = read_rows(tmp_path / "lc" / "lcurve.csv")
    assert len(rows) == 10 and all(r["status"] == "ok" for r in rows)
