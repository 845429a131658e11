from __future__ import annotations

import os
import subprocess
import sys

import pytest

from safexec.audit import AuditArtifact, prove, Transcript, MOCK
from safexec.cli import EXIT_ACCEPTANCE, EXIT_AUDIT, EXIT_CONFIG, EXIT_OK, main
from safexec.ppo import Policy, save_checkpoint

SHORT = """
[market]
session_minutes = 30
[episode]
q0 = 5000
[ppo]
hidden = 8
episodes_per_update = 1
minibatch_size = 32
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "short.ini").write_text(SHORT)
    save_checkpoint(Policy(20, 2, hidden=(8,), seed=1), str(d / "policy.ckpt"))
    return d


def run(*args) -> int:
    return main([str(a) for a in args])


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("simulate", "train", "evaluate", "sweep", "stress", "audit-verify", "report"):
        assert cmd in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "safexec", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "audit-verify" in proc.stdout


def test_config_errors_exit_2(workdir, capsys):
    bad = workdir / "bad.ini"
    bad.write_text("[market]\nwhat = 1\n")
    assert run("evaluate", "--config", bad, "--strategy", "TWAP") == EXIT_CONFIG
    assert run("evaluate", "--config", workdir / "missing.ini") == EXIT_CONFIG
    assert run("evaluate", "--config", workdir / "short.ini", "--strategy", "NOPE") == EXIT_CONFIG
    assert run("evaluate", "--config", workdir / "short.ini", "--strategy", "RL_SAFE") == EXIT_CONFIG
    assert run("evaluate", "--config", workdir / "short.ini", "--strategy", "RL_SAFE",
               "--checkpoint", workdir / "nope.ckpt") == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--days", "x"])
    assert exc.value.code == 2


def test_simulate(workdir, capsys):
    out = workdir / "sim"
    assert run("simulate", "--config", workdir / "short.ini", "--out", out, "--fills", "--seed", 3) == EXIT_OK
    text = (out / "simulate.csv").read_text()
    assert text.startswith("seed,volume") and text.splitlines()[1].startswith("3,")
    assert (out / "fills_3_venue0.csv").exists()


def test_evaluate_check_and_audit(workdir, capsys):
    out = workdir / "eval"
    code = run("evaluate", "--config", workdir / "short.ini", "--out", out, "--days", 2,
               "--strategy", "TWAP,GREEDY,RL_SAFE", "--checkpoint", workdir / "policy.ckpt", "--check")
    assert code == EXIT_OK
    assert "check passed" in capsys.readouterr().out
    for name in ("daily.csv", "aggregate.csv", "pairs.csv", "report.txt", "scenario.ini"):
        assert (out / name).exists(), name
    art = out / "artifacts" / "RL_SAFE_0.zkca"
    mock = out / "artifacts" / "RL_SAFE_0.mock.zkca"
    transcript = out / "transcripts" / "RL_SAFE_0.txt"
    assert run("audit-verify", art) == EXIT_OK
    assert run("audit-verify", art, "--mode", "open", "--public-inputs", transcript) == EXIT_OK
    assert run("audit-verify", mock, "--mode", "mock") == EXIT_OK
    assert run("audit-verify", mock, "--mode", "open") == EXIT_AUDIT

    # flip one byte inside the embedded transcript
    data = bytearray(art.read_bytes())
    pos = data.index(b"\n", len(data) - 200) - 70
    data[pos] = ord("0") if data[pos] != ord("0") else ord("1")
    forged = workdir / "forged.zkca"
    forged.write_bytes(bytes(data))
    assert run("audit-verify", forged) == EXIT_AUDIT
    (workdir / "junk.zkca").write_bytes(b"junk")
    assert run("audit-verify", workdir / "junk.zkca") == EXIT_AUDIT
    assert run("audit-verify", workdir / "absent.zkca") == EXIT_CONFIG

    # report re-aggregates the per-day CSV
    rep_out = workdir / "rep"
    assert run("report", out / "daily.csv", "--out", rep_out) == EXIT_OK
    # the per-day CSV carries 6 decimals, so the recomputed table agrees to that precision
    a = [ln.split(",") for ln in (rep_out / "aggregate.csv").read_text().splitlines()]
    b = [ln.split(",") for ln in (out / "aggregate.csv").read_text().splitlines()]
    assert a[0] == b[0] and [r[:2] for r in a] == [r[:2] for r in b]
    for ra, rb in zip(a[1:], b[1:]):
        assert [float(x) for x in ra[2:]] == pytest.approx([float(x) for x in rb[2:]], abs=2e-4)
    bad = workdir / "bad.csv"
    bad.write_text("a,b\n")
    assert run("report", bad) == EXIT_CONFIG


def test_evaluate_check_fails_on_violations(workdir, capsys):
    cfg = workdir / "check.ini"
    cfg.write_text(SHORT + "[shield]\nmode = check\nalpha = 0.0001\n")
    code = run("evaluate", "--config", cfg, "--out", workdir / "eval_bad", "--days", 1,
               "--strategy", "RL_SAFE", "--checkpoint", workdir / "policy.ckpt", "--check")
    assert code == EXIT_ACCEPTANCE
    assert "check failed" in capsys.readouterr().out


def test_train_writes_outputs(workdir):
    out = workdir / "train"
    assert run("train", "--config", workdir / "short.ini", "--out", out, "--epochs", 2) == EXIT_OK
    curve = (out / "learning_curve.csv").read_text().splitlines()
    assert curve[0] == "epoch,mean_reward,mean_is_bps,violations" and len(curve) == 3
    assert (out / "policy.ckpt").stat().st_size > 0 and (out / "policy_best.ckpt").exists()


def test_sweep_and_stress(workdir, capsys):
    ckpt = workdir / "policy.ckpt"
    assert run("sweep", "--config", workdir / "short.ini", "--out", workdir / "sw", "--days", 2,
               "--checkpoint", ckpt, "--alpha", 0.05, "--alpha", 0.3) == EXIT_OK
    lines = (workdir / "sw" / "alpha_sweep.csv").read_text().splitlines()
    assert lines[0] == "alpha,mean_is_bps,ci95,violation_rate_unconstrained" and len(lines) == 3
    for variant in ("latency_500ms", "liquidity_half", "shield_toggle"):
        cfg = workdir / "short.ini"
        if variant == "shield_toggle":
            cfg = workdir / "toggle.ini"
            cfg.write_text(SHORT + "[experiment]\nstress_toggle_step = 15\n")
        assert run("stress", "--config", cfg, "--out", workdir / "st", "--days", 2, "--variant", variant,
                   "--strategy", "TWAP,RL_SAFE", "--checkpoint", ckpt) == EXIT_OK
        assert (workdir / "st" / f"stress_{variant}.csv").exists()
    assert "before toggle: 0" in capsys.readouterr().out
