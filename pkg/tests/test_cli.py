import json

import numpy as np
import pytest

from halfvolume.cli import ConfigError, DEFAULTS, build_parser, args_to_config, main, run, validate_config
from halfvolume.grid import TorusGrid
from halfvolume.io import load_field, load_voxel_sets, save_field
from halfvolume.minmax import SpectrumTable


@pytest.mark.parametrize("q", [2.5, 2.0, 2.2, 1.0])
def test_tail_exponent_out_of_range_is_rejected(q):
    with pytest.raises(ConfigError, match=r"potential/q.*2 < q < 2\.2"):
        validate_config({"command": "solve", "potential": {"name": "glued_quartic", "q": q}})


def test_unknown_keys_and_commands_rejected():
    with pytest.raises(ConfigError, match="resolution"):
        validate_config({"command": "solve", "resolution": 64})
    with pytest.raises(ConfigError):
        validate_config({"command": "fly"})
    with pytest.raises(ConfigError, match="eps"):
        validate_config({"command": "width", "eps": -1.0})


def test_defaults_are_filled():
    cfg = validate_config({"command": "weyl"})
    assert cfg["eps"] == DEFAULTS["weyl"]["eps"] and cfg["seed"] == 0
    assert cfg["potential"] == {"name": "glued_quartic"}


def test_solve_zero_init_manifest(tmp_path):
    man = run({"command": "solve", "dim": 2, "res": 16, "eps": 0.1, "init": "zero", "out": str(tmp_path)})
    cp = json.loads((tmp_path / "critical_point.json").read_text())
    assert cp["residual"] == 0.0 and cp["iterations"] == 0
    stored = json.loads((tmp_path / "manifest.json").read_text())
    assert stored["ok"] and stored["config"]["init"] == "zero" and stored["grid"]["res"] == [16, 16]
    u, eps = load_field(tmp_path / "field.hvf")
    assert eps == 0.1 and np.all(u.values == 0)
    assert man.ok


def test_solve_then_diagnose(tmp_path):
    run({"command": "solve", "dim": 1, "res": 256, "eps": 0.05, "out": str(tmp_path)})
    for _ in range(2):
        man = run({"command": "diagnose", "field": str(tmp_path / "field.hvf"), "out": str(tmp_path)})
    rows = [json.loads(line) for line in (tmp_path / "certificates.jsonl").read_text().splitlines()]
    assert len(rows) == 2 and rows[0] == rows[1]
    assert man.checks == {"identity": True, "linf": True}
    assert abs(rows[0]["energy"]["normalized"] - 2.0) < 0.05


def test_file_init_roundtrip(tmp_path):
    g = TorusGrid.unit(1, 64)
    x, = g.mesh()
    save_field(tmp_path / "init.hvf", g.field(np.cos(2 * np.pi * x)), 0.1)
    man = run({"command": "solve", "dim": 1, "res": 64, "eps": 0.1,
               "init": f"file:{tmp_path / 'init.hvf'}", "out": str(tmp_path / "o")})
    assert man.checks["converged"]


def test_retract_command(tmp_path):
    man = run({"command": "retract", "order": "height", "sweepout": "lex", "out": str(tmp_path)})
    header, masks = load_voxel_sets(tmp_path / "retracted.json")
    assert header["dims"] == [16, 16] and len(masks) == 257
    assert all(m.sum() == 128 for m in masks)
    rep = json.loads((tmp_path / "retraction_report.json").read_text())
    assert rep["ok"] and man.ok


def test_width_and_small_weyl(tmp_path):
    common = {"eps": 0.1, "res": 32, "screen_res": 16, "deltas": [0.5, 0.25], "max_mode_sets": 1}
    man = run({"command": "width", "p": 1, **common, "out": str(tmp_path / "w")})
    assert man.ok
    cfg = {"command": "weyl", "p_min": 1, "p_max": 4, **common, "seed": 3, "out": str(tmp_path / "a")}
    run(cfg)
    run({**cfg, "out": str(tmp_path / "b")})
    a = (tmp_path / "a" / "spectrum.csv").read_bytes()
    assert a == (tmp_path / "b" / "spectrum.csv").read_bytes()
    table = SpectrumTable.from_csv(a.decode())
    assert table.ps(0.1, True) == [1, 2, 3, 4]
    summary = json.loads((tmp_path / "a" / "weyl.json").read_text())
    assert "fit" in summary and (tmp_path / "a" / "weyl.svg").exists()


def test_parser_to_config():
    ns = build_parser().parse_args(["width", "--p", "2", "--constrained", "false", "--q", "2.15"])
    cfg = args_to_config(ns)
    assert cfg["constrained"] is False and cfg["p"] == 2
    assert cfg["potential"] == {"name": "glued_quartic", "q": 2.15}
    validate_config(cfg)


def test_main_exit_codes(tmp_path, capsys):
    assert main(["solve", "--q", "2.5", "--out", str(tmp_path)]) == 2
    assert "2 < q < 2.2" in capsys.readouterr().err
    assert main(["verify-potential", "--potential", "pure_quartic", "--n-samples", "1000",
                 "--out", str(tmp_path)]) == 1
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"command": "verify-potential", "n_samples": 1000, "out": str(tmp_path)}))
    assert main(["run", "--config", str(cfg)]) == 0
