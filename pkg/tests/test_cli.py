import json

import numpy as np
import pytest

from hk.cli import (PRESETS, load_config, main, run, validate_config)
from hk.errors import ConfigError


def small_config(tmp_path, **overrides):
    cfg = json.loads(json.dumps(PRESETS["laminate-p2"]))
    cfg["grids"] = {"cell_n": 8, "fine_m": 8, "solve_n": 16, "sample_n": 32}
    cfg["ladder"] = [0.25, 0.125]
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


def test_validate_missing_p_pointer():
    cfg = json.loads(json.dumps(PRESETS["laminate-p2"]))
    del cfg["operator"]["p"]
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert info.value.pointer == "/operator/p"


def test_validate_bad_schema():
    with pytest.raises(ConfigError) as info:
        validate_config({"schema": 99})
    assert info.value.pointer == "/schema"


def test_validate_empty_ladder_pointer():
    cfg = json.loads(json.dumps(PRESETS["laminate-p2"]))
    cfg["ladder"] = []
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert info.value.pointer == "/ladder"


def test_validate_incommensurate_ladder_entry():
    cfg = json.loads(json.dumps(PRESETS["laminate-p2"]))
    cfg["ladder"] = [0.25, 0.2, 0.15]
    cfg["grids"]["fine_m"] = 16
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert info.value.pointer == "/ladder/2"


def test_missing_config_exits_3(tmp_path, capsys):
    assert run("verify", str(tmp_path / "nope.json"), str(tmp_path)) == 3
    assert "config" in capsys.readouterr().err


def test_schema_error_exit_code(tmp_path, capsys):
    path, cfg = small_config(tmp_path)
    broken = json.loads(path.read_text())
    del broken["operator"]["p"]
    path.write_text(json.dumps(broken))
    assert run("verify", str(path), str(tmp_path / "out")) == 3
    assert "/operator/p" in capsys.readouterr().err


def test_verify_identity_config_passes(tmp_path):
    path, _ = small_config(
        tmp_path,
        operator={"family": "linear", "p": 2.0, "alpha": 1.0,
                  "sigma": [1.0, 1.0]},
        geometry={"kind": "uniform"})
    out = tmp_path / "out"
    assert run("verify", str(path), str(out)) == 0
    payload = json.loads((out / "verify.json").read_text())
    assert payload["checks"]["pass"] is True


def test_effective_report_contents(tmp_path):
    path, _ = small_config(tmp_path)
    out = tmp_path / "out"
    assert run("effective", str(path), str(out)) == 0
    payload = json.loads((out / "effective.json").read_text())
    bhom = np.array(payload["b_hom"])
    assert abs(bhom[0, 0] - 1.6) < 1e-3 * 1.6
    assert abs(bhom[1, 1] - 2.5) < 1e-3 * 2.5
    assert set(payload["C_hom"]) == {"C-applied", "as-written"}
    assert payload["provenance"]["config_hash"]


def test_corrector_study_csv_rows(tmp_path):
    path, cfg = small_config(tmp_path)
    out = tmp_path / "out"
    assert run("corrector-study", str(path), str(out)) == 0
    lines = (out / "corrector_study.csv").read_text().strip().splitlines()
    assert lines[0] == "epsilon,E_exp,E_avg,E_dm,E_nocorr"
    assert len(lines) == 1 + len(cfg["ladder"])
    report = json.loads((out / "corrector_report.json").read_text())
    assert len(report["errors"]["E_exp"]) == len(cfg["ladder"])


def test_outputs_bitwise_reproducible(tmp_path):
    path, _ = small_config(tmp_path)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert run("corrector-study", str(path), str(out1)) == 0
    assert run("corrector-study", str(path), str(out2)) == 0
    assert (out1 / "corrector_study.csv").read_bytes() \
        == (out2 / "corrector_study.csv").read_bytes()
    assert (out1 / "corrector_report.json").read_bytes() \
        == (out2 / "corrector_report.json").read_bytes()


def test_cell_and_homogenized_commands(tmp_path):
    path, _ = small_config(tmp_path)
    out = tmp_path / "out"
    assert run("cell", str(path), str(out)) == 0
    report = json.loads((out / "cell_report.json").read_text())
    assert report["scalar"]["e1"]["flux_identity"] <= 1e-9
    assert (out / "cell_potential_e1.field").exists()
    assert run("homogenized", str(path), str(out)) == 0
    assert (out / "effective_potential.field").exists()


def test_fine_command_dumps_fields(tmp_path):
    path, cfg = small_config(tmp_path)
    out = tmp_path / "out"
    assert run("fine", str(path), str(out)) == 0
    for eps in cfg["ladder"]:
        tag = int(round(1 / eps))
        assert (out / f"fine_potential_eps_1_{tag}.field").exists()
        assert (out / f"fine_displacement_eps_1_{tag}.field").exists()


def test_nonconvergence_exit_code(tmp_path, capsys):
    path, _ = small_config(tmp_path, tolerances={"cell": 1e-30,
                                                 "macro": 1e-9})
    cfg = json.loads(path.read_text())
    cfg["operator"] = {"family": "power-law", "p": 3.0, "alpha": 1.0,
                       "sigma": [1.0, 4.0]}
    path.write_text(json.dumps(cfg))
    assert run("cell", str(path), str(tmp_path / "out")) == 2
    assert "solver failure" in capsys.readouterr().err


def test_all_reports_carry_provenance(tmp_path):
    path, _ = small_config(tmp_path)
    out = tmp_path / "out"
    for sub, fname in (("effective", "effective.json"),
                       ("homogenized", "homogenized_report.json"),
                       ("fine", "fine_report.json"),
                       ("cell", "cell_report.json")):
        assert run(sub, str(path), str(out)) == 0
        payload = json.loads((out / fname).read_text())
        assert payload["provenance"]["config_hash"]
        assert payload["provenance"]["grids"]
        assert payload["provenance"]["tolerances"]


def test_emit_report_deterministic(tmp_path):
    from hk.cli import emit_report
    bundle = {"a/report.json": {"z": 1, "a": [1.0, 2.0]},
              "notes.txt": "hello\n"}
    paths1 = emit_report(bundle, tmp_path / "one")
    paths2 = emit_report(bundle, tmp_path / "two")
    for p1, p2 in zip(paths1, paths2):
        assert p1.read_bytes() == p2.read_bytes()
    assert (tmp_path / "one" / "a" / "report.json").exists()


def test_validate_grid_power_of_two(tmp_path):
    cfg = json.loads(json.dumps(PRESETS["laminate-p2"]))
    cfg["grids"]["cell_n"] = 12
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert info.value.pointer == "/grids/cell_n"


def test_preset_loading_by_name():
    cfg = load_config("laminate-p3")
    assert cfg["operator"]["family"] == "power-law"
    with pytest.raises(ConfigError):
        load_config("not-a-preset")


def test_main_entry_point(tmp_path):
    path, _ = small_config(
        tmp_path,
        operator={"family": "linear", "p": 2.0, "alpha": 1.0,
                  "sigma": [1.0, 1.0]},
        geometry={"kind": "uniform"})
    code = main(["verify", "--config", str(path),
                 "--out", str(tmp_path / "out")])
    assert code == 0
