import subprocess
import sys

import pytest

from inertial_langevin import harness as H
from inertial_langevin.cli import main


def test_validate_exit_codes(capsys):
    assert main(["validate", "--eps", "1.5", "--dt", "0.05", "--kappa", "10"]) == 0
    assert "PASS" in capsys.readouterr().out.upper()
    assert main(["validate", "--eps", "1.5", "--dt", "0.2"]) == 1
    assert main(["validate", "--eps", "1.0", "--dt", "0.05"]) == 1


def test_theory_writes_report(tmp_path, capsys):
    out = tmp_path / "t.csv"
    code = main(["theory", "--eps", "1.5", "--dt", "0.05", "--kappa", "10", "--grid", "128",
                 "--dim", "2", "--delta", "0.1", "--w2-init", "1.0", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "discrete contraction" in text and "rho_k" in text
    rows = H.parse_csv(out)
    assert any(r[1] == "discrete" and r[2] == "passed" and r[3] == 1.0 for r in rows)


def test_run_preset_to_csv(tmp_path):
    out = tmp_path / "g.csv"
    code = main(["run", "--preset", "gauss100", "--sampler", "ila,ula", "--chains", "20",
                 "--steps", "10", "--metric-stride", "5", "--out", str(out)])
    assert code == 0
    rows = H.parse_csv(out)
    assert {r[1] for r in rows} == {"ila", "ula"}
    assert {r[0] for r in rows} == {0, 5, 10}
    assert H.load_batch(f"{out}.ila").shape == (20, 100)


def test_run_config_to_stdout(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("potential = gaussian\nmean = 0\nvariances = 1\nchains = 5\nsteps = 3\nsampler = ila\n")
    assert main(["run", "--config", str(cfg), "--metric-stride", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "iteration,scheme,metric,value"
    assert len(lines) > 1


def test_run_seed_override_is_deterministic(tmp_path):
    paths = [tmp_path / f"{i}.csv" for i in range(3)]
    for p, seed in zip(paths, (1, 1, 2)):
        main(["run", "--preset", "gauss100", "--sampler", "ila", "--chains", "6", "--steps", "4",
              "--seed", str(seed), "--out", str(p)])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_bytes() != paths[2].read_bytes()


def test_invalid_run_needs_force(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("potential = gaussian\nmean = 0\nvariances = 1\nchains = 2\nsteps = 2\n"
                   "sampler = ila\nfriction_ila = 1.0\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "force" in capsys.readouterr().err
    assert main(["run", "--config", str(cfg), "--force", "--out", str(tmp_path / "o.csv")]) == 0


def test_sweep_beta(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["sweep-beta", "--betas", "0,0.9", "--chains", "3", "--steps", "300", "--out", str(out)]) == 0
    assert "beta=0.9" in capsys.readouterr().out
    assert any(r[2] == "ess" for r in H.parse_csv(out))


def test_unknown_preset_rejected_by_parser():
    with pytest.raises(SystemExit):
        main(["run", "--preset", "nope"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "inertial_langevin", "validate", "--eps", "1.5", "--dt", "0.05"],
                         capture_output=True, text=True)
    assert res.returncode == 0
