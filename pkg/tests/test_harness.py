import csv
import math
import os
from dataclasses import replace

import pytest

import gravpic.harness as harness
from gravpic.cli import main as cli_main
from gravpic.errors import DegenerateFit, GravpicError, MonitorAbort
from gravpic.harness import (
    COLLAPSE,
    DISPERSE,
    RunConfig,
    ScanRun,
    classify_amplitude,
    config_from_ini,
    config_to_ini,
    load_config,
    phase_ladder_spec,
    reference_amplitude,
    run_amplitude_scan,
    run_single,
    run_tau_study,
    tau_ladder_spec,
)

def tiny_config(tmp_path, **overrides):
    base = dict(
        amplitude=0.0,
        epsilon=0.04,
        delta=0.2,
        tau=0.05,
        t_end=0.2,
        snapshot_stride=2,
        outdir=str(tmp_path / "out"),
        figures=False,
    )
    base.update(overrides)
    return RunConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(epsilon=0.3, delta=0.2)  # violates epsilon <= delta
    with pytest.raises(ValueError):
        RunConfig(tau=0.0)
    with pytest.raises(ValueError):
        RunConfig(t_end=-1.0)
    with pytest.raises(ValueError):
        RunConfig(scheme="leapfrog")


def test_config_ini_roundtrip(tmp_path):
    cfg = RunConfig(
        amplitude=41.125,
        epsilon=0.012,
        delta=0.1,
        tau=0.0125,
        t_end=2.5,
        scheme="semi_rk4",
        variant="literal",
        monitor_enabled=False,
        outdir="some/dir",
        figures=False,
        d_bound=3.75,
        monitor_checks="metric,density",
    )
    text = config_to_ini(cfg)
    assert config_from_ini(text) == cfg
    path = tmp_path / "run.ini"
    path.write_text(text)
    assert load_config(path) == cfg


def test_run_single_vacuum_outputs(tmp_path):
    cfg = tiny_config(tmp_path)
    result = run_single(cfg)
    records = result.history.records
    assert not result.aborted
    # vacuum: every recorded diagnostic is zero
    for rec in records:
        assert rec.diagnostics["adm_mass"] == 0.0
        assert rec.diagnostics["max_rho"] == 0.0
    # snapshot bookkeeping: steps = 4, stride = 2 -> indices 0, 2, 4
    snap_files = sorted(p for p in os.listdir(cfg.outdir) if p.startswith("snapshot"))
    assert len(snap_files) == math.floor(cfg.t_end / cfg.tau / cfg.snapshot_stride) + 1
    assert os.path.exists(os.path.join(cfg.outdir, "diagnostics.csv"))
    assert os.path.exists(os.path.join(cfg.outdir, "metadata.ini"))


def test_run_single_metadata_recreates_config(tmp_path):
    a_ref = reference_amplitude()
    cfg = tiny_config(tmp_path, amplitude=0.3 * a_ref, t_end=0.1, snapshot_stride=1)
    run_single(cfg)
    meta = load_config(os.path.join(cfg.outdir, "metadata.ini"))
    assert meta == cfg


def test_run_single_field_csv_schema(tmp_path):
    a_ref = reference_amplitude()
    cfg = tiny_config(tmp_path, amplitude=0.3 * a_ref, t_end=0.1)
    run_single(cfg)
    with open(os.path.join(cfg.outdir, "fields_final.csv")) as fh:
        header = next(csv.reader(fh))
    assert header == ["r", "rho", "p", "j", "m", "lam", "mu", "mu'", "lam'", "lam_dot"]


def test_run_single_byte_reproducible(tmp_path):
    a_ref = reference_amplitude()
    cfg_a = tiny_config(tmp_path, amplitude=0.4 * a_ref, t_end=0.2,
                        outdir=str(tmp_path / "a"), figures=True)
    cfg_b = replace(cfg_a, outdir=str(tmp_path / "b"))
    run_single(cfg_a)
    run_single(cfg_b)
    files_a = sorted(os.listdir(cfg_a.outdir))
    files_b = sorted(os.listdir(cfg_b.outdir))
    assert files_a == files_b
    for name in files_a:
        with open(os.path.join(cfg_a.outdir, name), "rb") as fa:
            blob_a = fa.read()
        with open(os.path.join(cfg_b.outdir, name), "rb") as fb:
            blob_b = fb.read()
        if name == "metadata.ini":
            blob_a = blob_a.replace(cfg_a.outdir.encode(), b"OUT")
            blob_b = blob_b.replace(cfg_b.outdir.encode(), b"OUT")
        assert blob_a == blob_b, f"{name} differs between identical runs"


def test_run_single_abort_marker_near_collapse(tmp_path):
    # heavy shell with a metric-only monitor: the exp(2 lam) bound fires on
    # the way to collapse, well before the hard trapped-surface error
    a_ref = reference_amplitude()
    cfg = tiny_config(
        tmp_path,
        amplitude=2.575 * a_ref,
        t_end=5.0,
        snapshot_stride=1000,
        validate=False,
        d_bound=3.0,
        monitor_checks="metric",
    )
    with pytest.raises(MonitorAbort):
        run_single(cfg)
    meta_path = os.path.join(cfg.outdir, "metadata.ini")
    text = open(meta_path).read()
    assert "aborted: MonitorAbort" in text
    min_one_minus = float(
        [ln for ln in text.splitlines() if ln.startswith("min_one_minus")][0]
        .split("=")[1]
    )
    assert 1.0 - min_one_minus > 0.9  # compactness recorded past the threshold


def test_tau_study_flat_streaming_first_order(tmp_path):
    # zero amplitude: free streaming; the staged step is plain Euler and its
    # gap to the RK4 reference shrinks linearly with the step
    cfg = tiny_config(tmp_path, amplitude=0.0, t_end=0.4)
    spec = tau_ladder_spec(cfg, [0.05, 0.025, 0.0125])
    result = run_tau_study(spec)
    assert not result.exact
    assert result.passed, f"observed order {result.order}"
    assert os.path.exists(result.paths[0])


def test_tau_study_rejects_mixed_resolutions(tmp_path):
    cfg = tiny_config(tmp_path)
    spec = tau_ladder_spec(cfg, [0.05, 0.025])
    spec.ladder[1] = (0.02, 0.2, 0.025)
    with pytest.raises(ValueError):
        run_tau_study(spec)


def test_tau_study_repeated_step_degenerate(tmp_path):
    a_ref = reference_amplitude()
    cfg = tiny_config(tmp_path, amplitude=0.3 * a_ref, t_end=0.1)
    with pytest.raises(DegenerateFit):
        run_tau_study(tau_ladder_spec(cfg, [0.05, 0.05]))


def test_phase_ladder_spec_coupling():
    cfg = RunConfig()
    spec = phase_ladder_spec(cfg, [0.2, 0.1], eps_rule="delta^2")
    assert spec.ladder[0] == (0.2**2, 0.2, 0.25 * 0.2)
    spec3 = phase_ladder_spec(cfg, [0.3, 0.2], eps_rule="delta^3")
    assert spec3.ladder[0][0] == pytest.approx(0.3**3)


def test_phase_study_two_rungs_low_confidence(tmp_path):
    a_ref = reference_amplitude()
    cfg = tiny_config(tmp_path, amplitude=0.4 * a_ref, t_end=0.4)
    result = harness.run_phase_study(phase_ladder_spec(cfg, [0.2, 0.1]))
    assert result.low_confidence
    assert len(result.metric_gaps) == 1
    assert result.metric_gaps[0] > 0.0
    assert result.metric_order is None


def test_classify_vacuum_disperses(tmp_path):
    cfg = tiny_config(tmp_path, t_end=0.3)
    run = classify_amplitude(cfg, 0.0)
    assert run.label == DISPERSE
    assert run.detail == "vacuum"


def test_classify_huge_amplitude_collapses(tmp_path):
    a_ref = reference_amplitude()
    cfg = tiny_config(tmp_path, t_end=5.0)
    run = classify_amplitude(cfg, 10.0 * a_ref)
    assert run.label == COLLAPSE
    assert run.peak_compactness >= 1.0


def test_bisection_arithmetic(monkeypatch, tmp_path):
    # drive the driver with a synthetic boundary at A = 1: bracket halves
    # every step and always contains the boundary
    def fake_classify(config, amplitude):
        label = COLLAPSE if amplitude > 1.0 else DISPERSE
        return ScanRun(amplitude, label, 0, 0.0)

    monkeypatch.setattr(harness, "classify_amplitude", fake_classify)
    cfg = tiny_config(tmp_path)
    k = 6
    result = run_amplitude_scan(cfg, 0.25, 4.25, k)
    lo, hi = result.bracket
    assert hi - lo == pytest.approx((4.25 - 0.25) / 2**k)
    assert lo <= 1.0 <= hi  # boundary stays bracketed
    assert len(result.runs) == k + 2
    assert os.path.exists(result.paths[0])


def test_scan_rejects_misclassified_endpoints(monkeypatch, tmp_path):
    def fake_classify(config, amplitude):
        return ScanRun(amplitude, COLLAPSE, 0, 1.0)

    monkeypatch.setattr(harness, "classify_amplitude", fake_classify)
    with pytest.raises(GravpicError):
        run_amplitude_scan(tiny_config(tmp_path), 0.1, 1.0, 2)


def test_cli_validate_and_run(tmp_path, capsys):
    a_ref = reference_amplitude()
    out = tmp_path / "cli_out"
    rc = cli_main([
        "run", "--amplitude", str(0.3 * a_ref), "--epsilon", "0.04",
        "--delta", "0.2", "--tau", "0.05", "--t-end", "0.1",
        "--outdir", str(out), "--no-figures",
    ])
    assert rc == 0
    assert (out / "metadata.ini").exists()

    rc = cli_main(["validate", "--amplitude", str(0.3 * a_ref)])
    assert rc == 0
    assert "PASS" in capsys.readouterr().out

    rc = cli_main(["validate", "--amplitude", str(100 * a_ref)])
    assert rc == 1


def test_cli_monitor_abort_exit_code(tmp_path):
    a_ref = reference_amplitude()
    # metric-only monitor via config file (the flag set has no checks option)
    cfg = tiny_config(
        tmp_path, amplitude=2.575 * a_ref, t_end=5.0, validate=False,
        d_bound=3.0, monitor_checks="metric", snapshot_stride=1000,
        outdir=str(tmp_path / "abort2"),
    )
    path = tmp_path / "abort.ini"
    path.write_text(config_to_ini(cfg))
    rc = cli_main(["run", "--config", str(path)])
    assert rc == 2


def test_cli_unclassified_exit_code(tmp_path):
    # an upper endpoint inside the frozen band finishes without a verdict
    a_ref = reference_amplitude()
    cfg = tiny_config(tmp_path, t_end=5.0, outdir=str(tmp_path / "scan"))
    path = tmp_path / "scan.ini"
    path.write_text(config_to_ini(cfg))
    rc = cli_main([
        "amp-scan", "--config", str(path),
        "--a-lo", str(0.1 * a_ref), "--a-hi", str(1.3375 * a_ref),
        "--bisections", "1",
    ])
    assert rc == 3
