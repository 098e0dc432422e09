"""Tests for config resolution and the command line entry points."""

import json

import numpy as np
import pytest
import yaml

from filmcell.cli import (
    _thread_count,
    cmd_check,
    cmd_cosserat,
    cmd_density,
    cmd_gamma,
    cmd_qcx,
    cmd_tabulate,
    main,
)
from filmcell.config import ConfigError, load_config, resolve_config


def quad_config(**cell_overrides):
    cell = {"fbar": [[0.6, 0.0], [0.0, 0.8], [0.0, 0.0]],
            "mesh": {"n1": 2, "n2": 2, "n3": 2}}
    cell.update(cell_overrides)
    return {"integrand": {"family": "pnorm", "params": {"p": 2.0}},
            "cell": cell}


def test_resolve_fills_defaults():
    cfg = resolve_config({})
    assert cfg["seed"] == 0
    assert cfg["integrand"]["family"] == "pnorm"
    assert cfg["cell"]["mesh"] == {"n1": 4, "n2": 4, "n3": 4}
    assert cfg["gamma"]["epsilons"] == [1.0, 0.5, 0.25, 0.125]
    # resolving twice is a no-op
    assert resolve_config(cfg) == cfg


def test_resolve_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="cell.fbarr"):
        resolve_config({"cell": {"fbarr": []}})
    with pytest.raises(ConfigError, match="mesh.n4"):
        resolve_config({"cell": {"mesh": {"n4": 2}}})


def test_resolve_validates_seed():
    with pytest.raises(ConfigError, match="seed"):
        resolve_config({"seed": -1})
    with pytest.raises(ConfigError, match="seed"):
        resolve_config({"seed": 2**64})
    assert resolve_config({"seed": 3})["seed"] == 3


def test_load_config_errors(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("cell: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_cmd_density_quadratic(tmp_path):
    code, report = cmd_density(quad_config(), out_dir=tmp_path)
    assert code == 0
    body = report["body"]
    assert abs(body["value"] - 1.0) < 1e-8
    assert body["l_star"] == 1.0
    assert body["warnings"] == []
    on_disk = json.loads((tmp_path / "density.json").read_text())
    assert on_disk["body_sha256"] == report["body_sha256"]


def test_cmd_density_deterministic_body():
    _, first = cmd_density(quad_config())
    _, second = cmd_density(quad_config())
    assert first["body_sha256"] == second["body_sha256"]
    assert first["body"] == second["body"]


def test_cmd_density_boundary_warning_exit_code():
    cfg = {
        "integrand": {
            "family": "two_well",
            "params": {"well_plus": [[0.0, 0.0, 0.3],
                                     [0.0, 0.0, 0.0],
                                     [0.0, 0.0, 0.4]]},
        },
        "cell": {
            "mesh": {"n1": 2, "n2": 2, "n3": 2},
            "l_search": {"l_min": 0.01, "l_max": 0.05, "grid_count": 5},
        },
    }
    code, report = cmd_density(cfg)
    assert code == 2
    assert "l-search-boundary" in report["body"]["warnings"]


def test_cmd_cosserat_adds_transverse_term():
    cfg = quad_config(z=[0.0, 0.0, 0.5])
    code, report = cmd_cosserat(cfg)
    assert code == 0
    assert abs(report["body"]["value"] - 1.25) < 1e-8
    assert report["body"]["z"] == [0.0, 0.0, 0.5]


def test_cmd_qcx_reports_relaxation_gap():
    cfg = {
        "integrand": {
            "family": "two_well",
            "params": {"well_plus": [[0.7, 0.0, 0.0],
                                     [0.0, 0.0, 0.0],
                                     [0.0, 0.0, 0.0]]},
        },
        "cell": {"F": [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
                 "mesh": {"n1": 4, "n2": 1, "n3": 4}},
    }
    code, report = cmd_qcx(cfg)
    assert code == 0
    body = report["body"]
    assert body["value"] <= 1e-3
    assert abs(body["raw_value"] - 0.49) < 1e-10
    assert body["relaxation_gap"] > 0.4


def test_cmd_gamma_cell_source(tmp_path):
    cfg = {
        "integrand": {
            "family": "pnorm",
            "modulation": {"kind": "laminate_x3", "levels": [1.0, 3.0],
                           "breaks": [0.0]},
        },
        "cell": {"mesh": {"n1": 2, "n2": 2, "n3": 2}},
        "gamma": {
            "omega": {"n1": 2, "n2": 2},
            "n3": 2,
            "fbar_bc": [[0.5, 0.0], [0.0, -0.3], [0.0, 0.2]],
            "epsilons": [1.0, 0.5],
        },
    }
    code, report = cmd_gamma(cfg, out_dir=tmp_path, export="csv")
    assert code == 0
    body = report["body"]
    assert abs(body["study"]["limit_energy"] - 1.52) < 1e-6
    assert body["ok"] is True
    assert all(abs(g) < 1e-6 for g in body["gaps"])
    csv_lines = (tmp_path / "gamma.csv").read_text().strip().split("\n")
    assert csv_lines[0].startswith("epsilon,")
    assert len(csv_lines) == 3


def test_cmd_tabulate_then_gamma_table_source(tmp_path):
    base_integrand = {"family": "pnorm", "params": {"p": 2.0}}
    tab_cfg = {
        "integrand": base_integrand,
        "cell": {"mesh": {"n1": 2, "n2": 2, "n3": 2}},
        "tabulate": {
            "kind": "cosserat",
            "x_points": [[0.5, 0.5]],
            "f_axes": [
                ["range", -0.6, 0.6, 5],
                ["frozen", 0.0], ["frozen", 0.0], ["frozen", 0.0],
                ["frozen", 0.0], ["frozen", 0.0],
            ],
            "z_axes": [["frozen", 0.0], ["frozen", 0.0],
                       ["range", -0.5, 0.5, 5]],
            "path": "quad.fct",
        },
        "output": {"dir": str(tmp_path)},
    }
    code, report = cmd_tabulate(tab_cfg, out_dir=tmp_path)
    assert code == 0
    body = report["body"]
    assert body["summary"]["pending"] == 0
    assert body["summary"]["invalid"] == 0
    assert len(body["values_sha256"]) == 64
    table_path = tmp_path / "quad.fct"
    assert table_path.exists()

    gamma_cfg = {
        "integrand": base_integrand,
        "cell": {"mesh": {"n1": 2, "n2": 2, "n3": 2}},
        "gamma": {
            "omega": {"n1": 2, "n2": 2},
            "n3": 2,
            "fbar_bc": [[0.3, 0.0], [0.0, 0.0], [0.0, 0.0]],
            "epsilons": [1.0, 0.5],
            "source": "table",
            "table_path": str(table_path),
        },
    }
    code, report = cmd_gamma(gamma_cfg)
    assert code == 0
    assert report["body"]["source"] == "table"
    assert all(abs(g) < 0.05 for g in report["body"]["gaps"])

    # the guard refuses a table built for a different integrand
    wrong = dict(gamma_cfg)
    wrong["integrand"] = {"family": "pnorm", "params": {"p": 2.0,
                                                        "scale": 2.0}}
    with pytest.raises(ValueError, match="hashes to"):
        cmd_gamma(wrong)


def test_cmd_check_full_suite():
    code, report = cmd_check({})
    assert code == 0
    body = report["body"]
    assert body["all_ok"] is True
    names = [c["name"] for c in body["checks"]]
    assert "integrand-growth" in names
    assert "identity-minz" in names
    assert len(names) == 10
    assert all(c["ok"] for c in body["checks"])


def test_cmd_check_subset_and_unknown():
    code, report = cmd_check({"check": {"names": ["determinism"]}})
    assert code == 0
    assert [c["name"] for c in report["body"]["checks"]] == ["determinism"]
    with pytest.raises(ConfigError, match="check.names"):
        cmd_check({"check": {"names": ["not-a-check"]}})
    code, report = cmd_check({"check": {"names": []}})
    assert code == 0
    assert report["body"]["checks"] == []


def test_cmd_check_repeat_is_byte_identical():
    cfg = {"check": {"names": ["bounds", "identity-minz"]},
           "cell": {"mesh": {"n1": 2, "n2": 2, "n3": 2}}}
    _, first = cmd_check(cfg)
    _, second = cmd_check(cfg)
    assert json.dumps(first["body"], sort_keys=True) == json.dumps(
        second["body"], sort_keys=True)
    assert first["body_sha256"] == second["body_sha256"]


def test_export_csv_requires_out_dir():
    with pytest.raises(ConfigError, match="--out"):
        cmd_density(quad_config(), export="csv")


def test_thread_count_env_cap(monkeypatch):
    monkeypatch.delenv("FILMCELL_THREADS", raising=False)
    assert _thread_count(4) == 4
    assert _thread_count(0) == 1
    monkeypatch.setenv("FILMCELL_THREADS", "2")
    assert _thread_count(8) == 2
    assert _thread_count(1) == 1
    monkeypatch.setenv("FILMCELL_THREADS", "lots")
    with pytest.raises(ConfigError, match="FILMCELL_THREADS"):
        _thread_count(4)


def test_main_density_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "density.yaml"
    cfg_path.write_text(yaml.safe_dump(quad_config()))
    out = tmp_path / "out"
    code = main(["density", "--config", str(cfg_path), "--out", str(out),
                 "--export", "csv"])
    assert code == 0
    printed = capsys.readouterr().out
    assert printed.startswith("density: exit 0")
    assert "body_sha256=" in printed
    report = json.loads((out / "density.json").read_text())
    assert abs(report["body"]["value"] - 1.0) < 1e-8
    csv_text = (out / "density.csv").read_text()
    assert csv_text.startswith("quantity,value")


def test_main_seed_override(tmp_path):
    cfg_path = tmp_path / "density.yaml"
    cfg_path.write_text(yaml.safe_dump(quad_config()))
    out = tmp_path / "out"
    code = main(["density", "--config", str(cfg_path), "--out", str(out),
                 "--seed", "11"])
    assert code == 0
    report = json.loads((out / "density.json").read_text())
    assert report["body"]["config"]["seed"] == 11


def test_main_reports_config_errors(tmp_path, capsys):
    cfg_path = tmp_path / "broken.yaml"
    cfg_path.write_text("cell:\n  fbarr: 3\n")
    assert main(["density", "--config", str(cfg_path)]) == 1
    err = capsys.readouterr().err
    assert "config error" in err and "cell.fbarr" in err
    assert main(["density", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert "error" in capsys.readouterr().err


def test_main_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_main_check_subset(tmp_path):
    cfg_path = tmp_path / "check.yaml"
    cfg_path.write_text(yaml.safe_dump(
        {"check": {"names": ["scaled-affine", "determinism"]},
         "cell": {"mesh": {"n1": 2, "n2": 2, "n3": 2}}}))
    assert main(["check", "--config", str(cfg_path)]) == 0
