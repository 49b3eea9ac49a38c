import json

import pytest

from coordtraj.cli import EXIT_THRESHOLD, EXIT_USAGE, run
from coordtraj.sequence import read_sequences

TINY = {"d_model": 8, "n_heads": 2, "d_ff": 16, "n_layers": 2, "embed_dim": 3, "mlp_widths": [8],
        "n_bins": 9, "n_agents_total": 2}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("COORDTRAJ_OUT", str(tmp_path / "out"))
    return tmp_path


def test_gen_data_deterministic(workdir):
    a, b = workdir / "a.jsonl", workdir / "b.jsonl"
    assert run(["gen-data", "--count", "500", "--seed", "7", "--out", str(a)]) == 0
    assert run(["gen-data", "--count", "500", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(read_sequences(a)) == 500


def test_gen_data_default_out_dir(workdir):
    assert run(["gen-data", "--count", "3"]) == 0
    assert (workdir / "out" / "toy.jsonl").exists()


def test_usage_errors(capsys):
    assert run(["no-such-command"]) == EXIT_USAGE
    assert run(["gen-data", "--bogus"]) == EXIT_USAGE
    assert run([]) == EXIT_USAGE


def test_runtime_error_exit_one(workdir):
    assert run(["eval", "--checkpoint", str(workdir / "missing.ckpt"), "--data", "x"]) == 1


@pytest.fixture
def trained(workdir):
    data = workdir / "d.jsonl"
    run(["gen-data", "--count", "6", "--seed", "1", "--steps", "3", "--out", str(data)])
    mc = workdir / "model.json"
    mc.write_text(json.dumps(TINY))
    ckpts = {}
    for mask in ("lookahead", "baseline"):
        ck = workdir / f"{mask}.ckpt"
        code = run(["train", "--model-config", str(mc), "--mask", mask, "--data", str(data),
                    "--epochs", "2", "--samples-per-epoch", "4", "--learning-rate", "1e-3",
                    "--out", str(ck)])
        assert code == 0
        ckpts[mask] = ck
    return data, ckpts


def test_train_eval_rollout_audits(workdir, trained, capsys):
    data, ckpts = trained
    assert (workdir / "lookahead.metrics.csv").read_text().startswith("epoch,train_nll,val_nll,lr")
    capsys.readouterr()
    assert run(["eval", "--checkpoint", str(ckpts["lookahead"]), "--data", str(data),
                "--csv", str(workdir / "steps.csv")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["per_timestep_nll"]) == 3

    out = workdir / "roll.jsonl"
    for mask, order in (("lookahead", "shuffled"), ("baseline", "given")):
        assert run(["rollout", "--checkpoint", str(ckpts[mask]), "--starts", "[[-1, 0], [1, 0]]",
                    "--order", order, "--mode", "bin_center", "--count", "3", "--steps", "4",
                    "--seed", "2", "--out", str(out)]) == 0
        seqs = read_sequences(out)
        assert len(seqs) == 3 and seqs[0].n_steps == 4
        trace = out.with_suffix(".trace.csv").read_text().splitlines()
        assert trace[0] == "rollout,t,k,agent_id,chosen_bin,prob" and len(trace) == 1 + 3 * 4 * 2

    capsys.readouterr()
    assert run(["audit-permutation", "--checkpoint", str(ckpts["lookahead"]), "--data", str(data),
                "--out", str(workdir / "perm.csv")]) == 0
    assert "correlation" in json.loads(capsys.readouterr().out)
    assert (workdir / "perm.csv").read_text().startswith("sequence,unshuffled_nll,shuffled_nll_mean")
    assert run(["audit-position", "--checkpoint", str(ckpts["lookahead"]), "--data", str(data),
                "--out", str(workdir / "pos.csv")]) == 0
    assert len((workdir / "pos.csv").read_text().splitlines()) == 1 + 12


def test_rollout_deterministic(workdir, trained):
    _, ckpts = trained
    outs = []
    for name in ("x", "y"):
        out = workdir / f"{name}.jsonl"
        run(["rollout", "--checkpoint", str(ckpts["lookahead"]), "--starts", "[[-1, 0], [1, 0]]",
             "--count", "2", "--steps", "3", "--seed", "5", "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_audit_mask(workdir, capsys):
    out = workdir / "mask"
    assert run(["audit-mask", "--mask", "naive", "--K", "2", "--T", "3", "--layers", "2",
                "--trials", "2", "--out", str(out)]) == 0
    report = json.loads((out / "leakage.json").read_text())
    assert report["leaks"] and report["perturbation"]["own_future_violations"] > 0
    lines = (out / "mask.txt").read_text().splitlines()
    assert lines[0].split() == ["z11", "z12", "z21", "z22", "z31", "z32"]
    assert all(set(line) <= {"0", "1"} for line in lines[1:])
    assert run(["audit-mask", "--mask", "lookahead", "--K", "2", "--T", "3", "--out", str(out)]) == 0
    assert json.loads((out / "leakage.json").read_text())["leaks"] == []


def test_reproduce_toy_threshold_failure(workdir, capsys):
    # far too little training to meet the thresholds
    code = run(["reproduce-toy", "--seed", "1", "--epochs", "1", "--samples-per-epoch", "2",
                "--rollouts", "2", "--eval-count", "2", "--out", str(workdir / "rt")])
    assert code == EXIT_THRESHOLD
    summary = json.loads((workdir / "rt" / "summary.json").read_text())
    assert summary["passed"] is False and len(summary["checks"]) == 7
    assert "FAIL" in capsys.readouterr().out
