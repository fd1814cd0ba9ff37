import csv
import json
import math

import pytest

from hillbloch import config
from hillbloch.cli import EXIT_CONFIG, EXIT_OK, main
from hillbloch.config import RunConfig, load_config, tolerance_scope
from hillbloch.errors import ConfigError


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_defaults_and_sections():
    cfg = RunConfig()
    assert cfg.section("verify")["cases"] == 20
    eff = cfg.effective()
    assert set(eff["options"]) == {"discriminant", "bands", "singularities", "expand", "verify"}


def test_nested_keys(tmp_path):
    p = write(tmp_path, {"grids": {"x_points": 64}, "tolerances": {"tol": 1e-9}, "bands": {"t_points": 8}})
    cfg = load_config(p)
    assert cfg.x_points == 64 and cfg.tol == 1e-9 and cfg.section("bands")["t_points"] == 8


@pytest.mark.parametrize("obj", [
    {"h": 0.5},
    {"tol": -1},
    {"k_max": -1},
    {"delta_ladder": [0.001, 0.002, 0.0005]},
    {"potential": {"coeffs": [[1.5, 0, 0]]}},
    {"unknown": 1},
    {"options": {"nope": {}}},
    [],
])
def test_invalid_configs(tmp_path, obj):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, obj))


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    assert main(["discriminant", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_tolerance_scope_restores():
    before = config.discriminant.CRIT_REL
    with tolerance_scope(RunConfig(crit_tol=1e-5)):
        assert config.discriminant.CRIT_REL == 1e-5
    assert config.discriminant.CRIT_REL == before


def test_cli_discriminant(tmp_path):
    cfg = write(tmp_path, {"discriminant": {"window": [0, 50, 0, 0], "n_re": 11, "n_im": 1}})
    out = tmp_path / "out"
    assert main(["discriminant", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader((out / "discriminant.csv").open()))
    assert len(rows) == 11
    for r in rows:
        lam = float(r["re_lambda"])
        assert abs(float(r["re_F"]) - 2 * math.cos(math.sqrt(lam))) < 1e-10
    eff = json.loads((out / "effective_config.json").read_text())
    assert eff["options"]["discriminant"]["n_re"] == 11
    assert (out / "run.log").read_text().strip()


def test_cli_bands_single_file(tmp_path):
    cfg = write(tmp_path, {"k_max": 0, "x_points": 64, "bands": {"t_points": 8}})
    out = tmp_path / "out"
    assert main(["bands", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    files = sorted(p.name for p in (out / "bands").iterdir())
    assert files == ["band_+0.csv"]


def test_cli_verify(tmp_path):
    cfg = write(tmp_path, {"potential": {"coeffs": [[1, 0.3, 0]]}, "x_points": 128, "verify": {"cases": 4}})
    out = tmp_path / "out"
    assert main(["verify", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == EXIT_OK
    report = json.loads((out / "verify.json").read_text())
    assert report["seed"] == 5
    assert set(report["checks"]) == {"wronskian", "eigenvalue_residual", "inner_product_identity", "alpha_identity"}
    assert all(c["passed"] for c in report["checks"].values())


def test_cli_k_max_override_rejected_for_expand(tmp_path):
    out = tmp_path / "out"
    assert main(["expand", "--out", str(out), "--k-max", "0"]) == EXIT_CONFIG
