import csv
import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from rollout_etc.cli import main
from rollout_etc.config import load_config, parse_config
from rollout_etc.errors import ParseError, ValidationError
from rollout_etc.io import fmt, flatten

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def cfg_text(**over):
    base = {"schema_version": 1, "name": "t", "plant": {"preset": "batch_reactor"}, "N_bar": 3}
    base.update(over)
    return json.dumps(base, indent=2)


def write(tmp_path, text, name="c.json"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- parsing -----------------------------------------------------------------


def test_two_mass_spring_preset():
    cfg = parse_config(cfg_text(plant={"preset": "two_mass_spring"}, N_bar=8))
    np.testing.assert_allclose(cfg.plant.Q, 10 * np.eye(4))
    np.testing.assert_allclose(cfg.plant.R, np.eye(1))
    assert (cfg.spec.g, cfg.spec.c, cfg.spec.b) == (1, 6, 22)
    assert cfg.plant.A.shape == (4, 4) and cfg.plant.B.shape == (4, 1)


def test_batch_reactor_preset():
    cfg = parse_config(cfg_text())
    assert (cfg.spec.g, cfg.spec.c, cfg.spec.b) == (3, 8, 22)
    assert cfg.plant.A.shape == (4, 4) and cfg.plant.B.shape == (4, 2)


def test_explicit_matrices():
    cfg = load_config(CONFIGS / "custom_scalar.json")
    assert cfg.plant.constrained
    assert cfg.spec.c == 2


def test_bucket_capacity_below_cost():
    with pytest.raises(ValidationError) as exc:
        parse_config(cfg_text(bucket={"g": 1, "c": 6, "b": 4}))
    assert any("b must be >= c" in v for v in exc.value.violations)


def test_unknown_keys_rejected_with_lines():
    text = cfg_text(colour="red", plant={"preset": "batch_reactor"})
    with pytest.raises(ValidationError) as exc:
        parse_config(text)
    (msg,) = exc.value.violations
    assert "colour" in msg and "line " in msg


def test_all_violations_reported():
    with pytest.raises(ValidationError) as exc:
        parse_config(cfg_text(variant=3, sigma_trigger=2.0, horizon_steps=0, beta0=99))
    assert len(exc.value.violations) == 4


def test_empty_horizon_rejected():
    with pytest.raises(ValidationError):
        parse_config(cfg_text(horizon_steps=0))
    with pytest.raises(ValidationError):
        parse_config(cfg_text(sweep={"N_bar": []}))


def test_syntax_error_has_position():
    with pytest.raises(ParseError) as exc:
        parse_config('{\n  "schema_version": 1,\n  "name": oops\n}')
    assert exc.value.line == 3
    assert exc.value.column is not None


def test_schema_version_required():
    with pytest.raises(ValidationError):
        parse_config(json.dumps({"plant": {"preset": "batch_reactor"}}))


def test_variant1_short_horizon_rejected():
    with pytest.raises(ValidationError):
        parse_config(cfg_text(N_bar=2))


def test_missing_file():
    with pytest.raises(ValidationError):
        load_config("/nonexistent/config.json")


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    load_config(path)


# -- writers -----------------------------------------------------------------


def test_fmt():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(True) == "1"
    assert fmt(np.int64(7)) == "7"
    assert fmt(None) == ""
    assert fmt(float("inf")) == "inf"


def test_flatten_row_major():
    assert flatten([[1, 2], [3, 4]]) == [1.0, 2.0, 3.0, 4.0]


# -- command line ------------------------------------------------------------


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(CONFIGS / "batch_reactor_beta6.json"), "--out", str(out), "--quiet"]) == 0
    summary = read_csv(out / "summary.csv")[0]
    assert float(summary["total_cost"]) == pytest.approx(114.562, abs=0.1)
    assert summary["bucket_ok"] == "1"
    trace = read_csv(out / "trace.csv")
    assert len(trace) == 502
    assert {"k", "beta", "gamma", "cumulative_cost"} <= set(trace[0])
    ing = json.loads((out / "ingredients.json").read_text())
    assert ing["M"] == 3


def test_outputs_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", str(CONFIGS / "custom_scalar.json"), "--out", str(out), "--quiet"]) == 0
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_sweep_horizon_table(tmp_path):
    path = write(
        tmp_path,
        cfg_text(sweep={"N_bar": [1, 3, 4], "variants": [1, 2]}, beta0=6, horizon_steps=60),
    )
    assert main(["sweep-horizon", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    rows = read_csv(tmp_path / "o" / "sweep_horizon.csv")
    assert [(r["variant"], r["N_bar"], r["status"]) for r in rows] == [
        ("1", "1", "horizon_below_M"), ("1", "3", "ok"), ("1", "4", "ok"),
        ("2", "1", "ok"), ("2", "3", "ok"), ("2", "4", "ok"),
    ]


def test_timing_table(tmp_path):
    path = write(tmp_path, cfg_text(timing={"N_bar": [3, 4], "variants": [2], "repeats": 1}))
    assert main(["timing", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    rows = read_csv(tmp_path / "o" / "timing.csv")
    assert [r["N_bar"] for r in rows] == ["3", "4"]
    assert all(float(r["median_seconds"]) > 0 for r in rows)


def test_etc_search_outputs(tmp_path):
    path = write(
        tmp_path,
        cfg_text(plant={"preset": "two_mass_spring"}, N_bar=8, etc_search={"grid_size": 5}, horizon_steps=80),
    )
    assert main(["etc-search", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert len(read_csv(tmp_path / "o" / "etc_grid.csv")) == 5
    assert read_csv(tmp_path / "o" / "etc_summary.csv")[0]["selection"] == "best_cost"


def test_verify_ingredients(tmp_path):
    assert main(["verify-ingredients", str(CONFIGS / "batch_reactor_beta6.json"),
                 "--out", str(tmp_path), "--quiet"]) == 0
    rows = read_csv(tmp_path / "ingredients_check.csv")
    assert all(r["passed"] == "1" for r in rows)


def test_exit_code_validation(tmp_path, capsys):
    path = write(tmp_path, cfg_text(bucket={"g": 1, "c": 6, "b": 4}))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "invalid input" in capsys.readouterr().err


def test_exit_code_parse(tmp_path):
    path = write(tmp_path, "{ not json")
    assert main(["run", str(path), "--quiet"]) == 2


def test_exit_code_infeasible(tmp_path):
    path = write(
        tmp_path,
        cfg_text(plant={"preset": "two_mass_spring_constrained"}, variant=2, N_bar=6, horizon_steps=5),
    )
    assert main(["run", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 3


def test_exit_code_numerical(tmp_path):
    text = json.dumps({
        "schema_version": 1, "name": "unctrl",
        "plant": {"A": [[1.1, 0], [0, 0.5]], "B": [[0], [1]], "Q": [[1, 0], [0, 1]], "R": [[1]]},
        "bucket": {"g": 1, "c": 2, "b": 4},
        "x0": [1, 0], "u0": [0], "beta0": 4, "N_bar": 2,
    })
    path = write(tmp_path, text)
    assert main(["verify-ingredients", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 4


def test_console_script(tmp_path):
    exe = shutil.which("rollout-etc")
    if exe is None:
        pytest.skip("console script not installed")
    res = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for verb in ("run", "sweep-horizon", "etc-search", "timing", "verify-ingredients"):
        assert verb in res.stdout
