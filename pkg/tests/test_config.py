import json
import os

import numpy as np
import pytest
import yaml

from klflow.cli import cmd_check, cmd_run, main
from klflow.config import parse_config, parse_dict
from klflow.errors import CapabilityError, ConfigurationError, ParseError
from klflow.measure import Target, make_rng

MINIMAL = """\
# minimal MMD flow run
flow: {kind: mmd_wgf, tau: 0.1, steps: 200, seed: 7}
kernel: {family: gaussian, sigma: 1.0}
target: {kind: empirical, csv: target.csv}
init: {kind: gaussian, n: 100, mean: [2.0], covariance: [[1.0]]}
"""


@pytest.fixture
def workdir(tmp_path):
    pts = Target.gaussian([0.0], [[1.0]]).sample(100, make_rng(0))
    np.savetxt(tmp_path / "target.csv", pts, delimiter=",")
    return tmp_path


def _write(workdir, text, name="run.yaml"):
    p = workdir / name
    p.write_text(text)
    return str(p)


def _raw(text):
    return yaml.safe_load(text)


def test_minimal_config_accepted(workdir):
    cfg = parse_config(_write(workdir, MINIMAL))
    assert cfg.flow.kind == "mmd_wgf" and cfg.flow.steps == 200 and cfg.flow.seed == 7
    assert cfg.init["n"] == 100 and cfg.init["seed"] == 8


def test_round_trip(workdir):
    cfg = parse_config(_write(workdir, MINIMAL))
    again = parse_config(_write(workdir, cfg.dumps(), "echo.yaml"))
    assert again == cfg
    assert again.dumps() == cfg.dumps()


def test_injection_zero_with_reaction_rejected(workdir):
    text = MINIMAL.replace("kind: mmd_wgf,", "kind: wfr_ift, beta: 0.5, injection: 0,")
    with pytest.raises(ConfigurationError, match="nowhere to go"):
        parse_config(_write(workdir, text))


def test_ksd_with_empirical_target_is_capability_error(workdir):
    text = MINIMAL.replace("kind: mmd_wgf", "kind: ksd_wgf")
    with pytest.raises(CapabilityError) as info:
        parse_config(_write(workdir, text))
    assert info.value.capability == "score"
    assert isinstance(info.value, ConfigurationError)


def test_steps_zero_rejected(workdir):
    with pytest.raises(ConfigurationError):
        parse_config(_write(workdir, MINIMAL.replace("steps: 200", "steps: 0")))


@pytest.mark.parametrize("edit,field", [
    (lambda r: r["flow"].update(tau="fast"), "flow.tau"),
    (lambda r: r["flow"].update(colour=1), "flow.colour"),
    (lambda r: r.pop("init"), "init"),
    (lambda r: r["target"].update(kind="uniform"), "target.kind"),
    (lambda r: r["target"].update(csv="missing.csv"), "target.csv"),
    (lambda r: r["init"].pop("n"), "init.n"),
    (lambda r: r["kernel"].update(sigma=-1.0), "kernel"),
])
def test_schema_errors_name_the_field(workdir, edit, field):
    raw = _raw(MINIMAL)
    edit(raw)
    with pytest.raises(ParseError) as info:
        parse_dict(raw, str(workdir))
    assert info.value.field == field


def test_malformed_yaml(workdir):
    with pytest.raises(ParseError):
        parse_config(_write(workdir, "flow: [unclosed"))


def test_mixture_target_and_init(workdir):
    text = """\
flow: {kind: wfr_ksd, tau: 0.05, alpha: 1.0, beta: 0.5, injection: 5, steps: 3}
kernel: {family: imq, c: 1.0, beta: 0.5}
target:
  kind: mixture
  components:
    - {mean: [-1.0, 0.0], covariance: [[1.0, 0.0], [0.0, 1.0]]}
    - {mean: [1.0, 0.0], covariance: [[0.5, 0.0], [0.0, 0.5]]}
init: {kind: target, n: 10}
"""
    cfg = parse_config(_write(workdir, text))
    assert cfg.target["weights"] == [0.5, 0.5]
    assert cfg.build_init().positions.shape == (10, 2)


# -- CLI ----------------------------------------------------------------------

def test_cmd_run_outputs(workdir):
    cfg = _write(workdir, MINIMAL.replace("steps: 200", "steps: 20"))
    out = workdir / "out"
    assert cmd_run(cfg, str(out)) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "step,time,mmd2,ksd2,mean_err,cov_err"
    assert len(lines) == 22
    ens = (out / "final_ensemble.csv").read_text().splitlines()
    assert ens[0] == "x_1,weight" and len(ens) == 101
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok"
    assert man["config"]["flow"]["kind"] == "mmd_wgf"
    assert man["final"]["step"] == 20
    assert not [f for f in os.listdir(out) if f.startswith(".tmp")]


def test_cmd_run_deterministic(workdir):
    cfg = _write(workdir, MINIMAL.replace("steps: 200", "steps: 30"))
    assert cmd_run(cfg, str(workdir / "a")) == 0
    assert cmd_run(cfg, str(workdir / "b")) == 0
    assert (workdir / "a/metrics.csv").read_bytes() == (workdir / "b/metrics.csv").read_bytes()


def test_cmd_run_fr_exact_rows(workdir):
    text = MINIMAL.replace("kind: mmd_wgf", "kind: fr_exact").replace("steps: 200", "steps: 10")
    assert cmd_run(_write(workdir, text), str(workdir / "o")) == 0
    rows = (workdir / "o/metrics.csv").read_text().splitlines()[1:]
    mmd = np.array([float(r.split(",")[2]) for r in rows])
    n = np.arange(len(mmd))
    assert np.allclose(mmd, np.exp(-2 * n * 0.1) * mmd[0], rtol=1e-10, atol=0)


def test_cmd_run_jko_convergence_failure(workdir):
    text = MINIMAL.replace("kind: mmd_wgf, tau: 0.1, steps: 200",
                           "kind: jko, tau: 1.0, steps: 2, jko_tol: 1.0e-300, jko_max_iter: 3")
    text = text.replace("n: 100", "n: 5")
    out = workdir / "o"
    assert cmd_run(_write(workdir, text), str(out)) != 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "convergence_error" and man["residual"] > 0
    assert not (out / "metrics.csv").exists()


def test_cmd_run_bad_config(workdir, capsys):
    assert cmd_run(_write(workdir, "flow: {}"), str(workdir / "o")) != 0
    assert "flow.kind" in capsys.readouterr().err


def test_cmd_check_kernels_passes(capsys):
    assert cmd_check("kernels") == 0
    assert "gradient consistency" in capsys.readouterr().out


def test_cmd_check_negative_sigma_fails(capsys):
    assert main(["check", "kernels", "--sigma", "-1"]) != 0
    out = capsys.readouterr().out
    assert "FAIL" in out and "sigma must be positive" in out


def test_thread_cap_env(workdir, monkeypatch):
    monkeypatch.setenv("KLFLOW_NUM_THREADS", "1")
    cfg = _write(workdir, MINIMAL.replace("steps: 200", "steps: 2"))
    assert main(["run", cfg, "--out", str(workdir / "o")]) == 0
