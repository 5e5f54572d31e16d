import csv
import hashlib
import json

import numpy as np
import pytest

from hamparareal.cli import CSV_HEADER, main
from hamparareal.config import ExperimentConfig, bundled_configs, resolve
from hamparareal.errors import ConfigurationError

SMALL = """
[system]
kind = kepler
eccentricity = 0.3

[grid]
T = 2.0
window = 0.2
fine_step = 1e-3
coarse_step = 0.05
K = 3

[scheme]
variant = {variant}

[projection]
tol = 1e-9
max_iter = 3
"""


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_configs_lists_bundled(capsys):
    assert main(["configs"]) == 0
    names = capsys.readouterr().out.split()
    assert "kepler-sym-projected" in names and "solar-sym-projected" in names


@pytest.mark.parametrize("name", bundled_configs())
def test_bundled_configs_roundtrip_and_build(name):
    exp = resolve(name)
    again = ExperimentConfig.parse(exp.dumps())
    assert again == exp
    cfg, u0 = exp.build()
    assert cfg.variant == exp.variant and u0.ndim == 1


def test_unknown_key_and_bad_value():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.parse("[grid]\nsteps = 3\n")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.parse("[grid]\nK = many\n")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.parse("[scheme]\nvariant = leapfrog\n")


@pytest.mark.parametrize("variant", ["plain", "symmetric", "plain_projected",
                                     "symmetric_sym_projected"])
def test_run_writes_artifacts(tmp_path, variant, capsys):
    cfg = write(tmp_path, SMALL.format(variant=variant))
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == 0
    with open(out / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + 4 * 11
    assert rows[1][:2] == ["0", "0"]
    states = np.load(out / "states.npy")
    assert states.shape == (4, 11, 4)
    assert (out / "half_states.npy").exists() == variant.startswith("symmetric")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["variant"] == variant and summary["N"] == 10
    assert summary["fine_floor"] > 0
    assert len(summary["max_errors"]["err_traj"]) == 4
    assert summary["max_errors"]["err_L_1"] == [None] * 4
    if "projected" in variant:
        assert abs(sum(summary["newton"]["stop_frequencies"].values()) - 1) < 1e-12
    assert ExperimentConfig.load(out / "config.cfg").variant == variant


def test_stride_keeps_last_point(tmp_path):
    cfg = write(tmp_path, SMALL.format(variant="plain"))
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out), "--stride", "4"]) == 0
    rows = list(csv.DictReader(open(out / "series.csv")))
    times = sorted({float(r["t"]) for r in rows})
    assert times == pytest.approx([0.0, 0.8, 1.6, 2.0])


def test_single_window_without_iterations(tmp_path):
    text = SMALL.format(variant="symmetric").replace("T = 2.0", "T = 0.2").replace("K = 3", "K = 0")
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, text), "--out", str(out)]) == 0
    assert np.load(out / "states.npy").shape == (1, 2, 4)


def test_invalid_inputs_exit_2(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["exit_code"] == 2 and record["error"] == "ConfigurationError"
    bad = write(tmp_path, "[grid]\nwindow = 0.3\nT = 1.0\n")
    assert main(["run", bad, "--out", str(tmp_path / "o")]) == 2
    ok = write(tmp_path, SMALL.format(variant="plain"))
    assert main(["run", ok, "--workers", "0"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", ok, "--out", str(blocker / "sub")]) == 2
    assert main(["report", str(tmp_path / "nothing")]) == 2


def test_runtime_failure_exit_3(tmp_path, capsys):
    text = "[system]\nkind = harmonic\nomega = 100\n[grid]\nT = 40\nwindow = 0.2\n" \
           "fine_step = 1e-3\ncoarse_step = 0.1\nK = 2\n"
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, text), "--out", str(out)]) == 3
    record = json.loads((out / "error.json").read_text())
    assert record["error"] == "IntegrationBlowup"
    assert record["location"]["k"] == 0 and 0 <= record["location"]["n"] < 200
    assert json.loads(capsys.readouterr().err.strip())["exit_code"] == 3


def test_report(tmp_path, capsys):
    dirs = []
    for variant in ("plain", "symmetric"):
        out = tmp_path / variant
        assert main(["run", write(tmp_path, SMALL.format(variant=variant), variant + ".cfg"),
                     "--out", str(out)]) == 0
        dirs.append(str(out))
    capsys.readouterr()
    table = tmp_path / "table.csv"
    assert main(["report", *dirs, "--csv", str(table)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split()[:3] == ["run", "system", "variant"]
    assert "speedup_vs_first" in lines[0] and len(lines) == 3
    rows = list(csv.DictReader(open(table)))
    assert float(rows[0]["speedup_vs_first"]) == 1.0


def test_reference_command(tmp_path, capsys):
    assert main(["reference", write(tmp_path, SMALL.format(variant="plain"))]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["samples"] == 11 and info["fine_floor"] > 0


def test_workers_do_not_change_artifacts(tmp_path):
    cfg = write(tmp_path, SMALL.format(variant="symmetric_sym_projected"))
    digests = set()
    for w in (1, 2, 8):
        out = tmp_path / f"w{w}"
        assert main(["run", cfg, "--out", str(out), "--workers", str(w)]) == 0
        digests.add((sha(out / "series.csv"), sha(out / "states.npy")))
    assert len(digests) == 1


def test_random_initial_state_follows_seed(tmp_path):
    text = SMALL.format(variant="plain").replace("eccentricity = 0.3", "initial = random")
    cfg = write(tmp_path, text)
    a, b, c = (tmp_path / x for x in "abc")
    assert main(["run", cfg, "--out", str(a), "--seed", "3"]) == 0
    assert main(["run", cfg, "--out", str(b), "--seed", "3"]) == 0
    assert main(["run", cfg, "--out", str(c), "--seed", "4"]) == 0
    assert sha(a / "states.npy") == sha(b / "states.npy") != sha(c / "states.npy")
