import csv
import hashlib
import json

import pytest

from stochns.cli import ConfigError, main, validate_config

MINIMAL = 'command = "single_run"\noutput_dir = "out"\n'

CONSTANTS = """
command = "constants"
output_dir = "{out}"
[physics]
viscosity = 1.0
horizon = 1.0
[theory]
k0 = 1.0
c_tilde = 1.0
c_bar = 1.0
"""

ZERO_RUN = """
command = "single_run"
output_dir = "{out}"
[physics]
n_modes = 8
[noise]
amplitude = 0.0
[initial]
kind = "zero"
[scheme]
n_steps = 4
"""

SMALL_STUDY = """
command = "convergence"
output_dir = "{out}"
[physics]
n_modes = 8
[noise]
amplitude = 5.0
[study]
ladder = [2, 4, 8]
reference_n = 64
mc_samples = 4
batch_size = 4
"""


def write(tmp_path, text, name="run.toml", out="out"):
    path = tmp_path / name
    path.write_text(text.format(out=tmp_path / out))
    return str(path)


# ---------------------------------------------------------------- validation

def test_minimal_config_gets_defaults():
    cfg = validate_config(MINIMAL)
    assert cfg.scheme.solver_tol == 1e-11
    assert cfg.scheme.inner_substeps == 8
    assert cfg.theory_value("hoelder_p") == 1.05
    assert cfg.study.ladder == (8, 16, 32, 64, 128)


def test_ladder_divisibility_error():
    text = MINIMAL + "[study]\nladder = [12]\nreference_n = 128\n"
    with pytest.raises(ConfigError) as info:
        validate_config(text)
    assert any("does not divide" in e for e in info.value.errors)


def test_beta_range_error():
    with pytest.raises(ConfigError) as info:
        validate_config(MINIMAL + "[theory]\nbeta = 1.5\n")
    assert any("(0, 1)" in e for e in info.value.errors)


def test_all_errors_are_collected():
    text = ('command = "nope"\n[physics]\nviscosity = "fast"\nbogus = 1\n'
            '[study]\nladder = [12]\nreference_n = 128\n[theory]\nbeta = 2.0\n')
    with pytest.raises(ConfigError) as info:
        validate_config(text)
    msgs = " | ".join(info.value.errors)
    for fragment in ("command", "physics.viscosity", "physics.bogus", "does not divide", "beta"):
        assert fragment in msgs


def test_integer_fields_reject_floats_and_bools():
    with pytest.raises(ConfigError):
        validate_config(MINIMAL + "[scheme]\nn_steps = 4.5\n")
    with pytest.raises(ConfigError):
        validate_config(MINIMAL + "[study]\nmc_samples = true\n")


def test_malformed_toml():
    with pytest.raises(ConfigError):
        validate_config("command = ")


# ---------------------------------------------------------------- runs

def test_constants_run(tmp_path):
    assert main(["--config", write(tmp_path, CONSTANTS)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "constants.csv")))
    gamma = [r for r in rows if r["name"] == "gamma_sup" and r["regime"] == "euler_additive"]
    assert float(gamma[0]["value"]) == pytest.approx(1 / 6, abs=1e-15)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["software"].startswith("stochns ")
    for entry in manifest["files"]:
        data = (tmp_path / "out" / entry["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]


def test_zero_single_run_writes_zeros(tmp_path):
    assert main(["--config", write(tmp_path, ZERO_RUN)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "trajectory.csv")))
    assert len(rows) == 5
    assert all(float(r[c]) == 0 for r in rows for c in ("l2", "grad_l2", "stokes_l2"))
    assert (tmp_path / "out" / "final_state.sns2").exists()


def test_runs_are_reproducible(tmp_path):
    cfg = write(tmp_path, SMALL_STUDY)
    assert main(["--config", cfg, "--output", str(tmp_path / "a")]) == 0
    assert main(["--config", cfg, "--output", str(tmp_path / "b")]) == 0
    for name in ("errors.csv", "rates.csv", "moments.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_samples(tmp_path):
    cfg = write(tmp_path, SMALL_STUDY)
    assert main(["--config", cfg, "--output", str(tmp_path / "a")]) == 0
    assert main(["--config", cfg, "--output", str(tmp_path / "b"), "--seed-override", "7"]) == 0
    assert (tmp_path / "a" / "errors.csv").read_bytes() != (tmp_path / "b" / "errors.csv").read_bytes()
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["study"]["base_seed"] == 7


def test_diagnostics_run(tmp_path):
    text = ZERO_RUN.replace('"single_run"', '"diagnostics"').replace('kind = "zero"',
                                                                    'kind = "random_smooth"')
    assert main(["--config", write(tmp_path, text)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "identities.csv")))
    assert rows and all(float(r["antisymmetry_rel"]) < 1e-10 for r in rows)


def test_dry_run_writes_nothing(tmp_path, capsys):
    assert main(["--config", write(tmp_path, CONSTANTS), "--dry-run"]) == 0
    assert not (tmp_path / "out").exists()
    assert json.loads(capsys.readouterr().out)["status"] == "ok"


# ---------------------------------------------------------------- exit codes

def test_config_error_exit_code(tmp_path, capsys):
    bad = write(tmp_path, MINIMAL + "[theory]\nbeta = 1.5\n")
    assert main(["--config", bad]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["kind"] == "config"


def test_missing_output_dir_is_config_error(tmp_path):
    assert main(["--config", write(tmp_path, 'command = "constants"\n')]) == 2


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["--config", str(tmp_path / "absent.toml")]) == 4


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["--config", write(tmp_path, CONSTANTS), "--output", str(blocker / "sub")]) == 4


def test_solver_failure_exit_code_and_record(tmp_path):
    text = """
command = "single_run"
output_dir = "{out}"
[physics]
n_modes = 8
horizon = 10.0
[initial]
amplitude = 500.0
[scheme]
n_steps = 2
solver_max_iter = 3
"""
    assert main(["--config", write(tmp_path, text)]) == 3
    record = json.loads((tmp_path / "out" / "failed" / "error.json").read_text())
    assert record["kind"] == "SolverError"
    assert record["step"] == 0
    assert not (tmp_path / "out" / "manifest.json").exists()
