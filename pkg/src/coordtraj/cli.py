"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 acceptance-threshold failure.
Outputs default to the directory named by ``COORDTRAJ_OUT`` (or the cwd).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import leakage_audit, per_timestep_nll, permutation_audit, position_conditioning_audit
from .generation import MODES, rollout_agentwise, rollout_simultaneous, teacher_forced_nll
from .mask import VARIANTS, build_mask, leak_report, reachability
from .model import TOY_MODEL_CONFIG, ModelConfig
from .sequence import read_sequences, write_sequences
from .toyworld import ToyConfig, generate_toy_dataset, toy_stream
from .training import TrainConfig, sample_stream, train, write_metrics_csv
from .trajectory_space import TOY_GRID, BinGrid

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_THRESHOLD = 0, 1, 2, 3
OUT_ENV = "COORDTRAJ_OUT"

log = logging.getLogger("coordtraj")


def _out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "."))


def _out_path(arg, default_name: str) -> Path:
    if arg:
        return Path(arg)
    d = _out_dir()
    d.mkdir(parents=True, exist_ok=True)
    return d / default_name


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def cmd_gen_data(args) -> int:
    cfg = ToyConfig(n_steps=args.steps)
    path = _out_path(args.out, "toy.jsonl")
    write_sequences(path, generate_toy_dataset(cfg, args.count, args.seed))
    print(f"wrote {args.count} sequences to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg = ModelConfig.from_dict({**TOY_MODEL_CONFIG.to_dict(), **_load_json(args.model_config)})
    train_cfg = TrainConfig.from_dict({
        **TrainConfig().to_dict(),
        **_load_json(args.train_config),
        **_overrides(args, ["learning_rate", "epochs", "samples_per_epoch", "seed"]),
    })
    if args.no_shuffle:
        train_cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "shuffle_agents": False})
    grid = BinGrid.from_dict(_load_json(args.grid)) if args.grid else TOY_GRID
    rng = np.random.default_rng(train_cfg.seed)
    if args.data:
        data = read_sequences(args.data)
        source = sample_stream(data, rng)
        val = read_sequences(args.val) if args.val else data
    else:
        toy = ToyConfig()
        source = toy_stream(toy, rng)
        val = read_sequences(args.val) if args.val else generate_toy_dataset(toy, 200, train_cfg.seed + 1)
    result = train(model_cfg, train_cfg, source, val, grid, args.mask,
                   on_epoch=lambda m: print(f"epoch {m.epoch} train_nll {m.train_nll:.4f} "
                                            f"val_nll {m.val_nll:.4f} lr {m.lr:g}", flush=True))
    out = _out_path(args.out, f"{args.mask}.ckpt")
    save_checkpoint(out, result.model, grid, args.mask, train_cfg.to_dict(), [m.__dict__ for m in result.metrics])
    metrics = Path(args.metrics) if args.metrics else out.with_suffix(".metrics.csv")
    write_metrics_csv(metrics, result.metrics)
    print(f"best epoch {result.best_epoch} val_nll {result.best_val_nll:.4f}; checkpoint {out}; metrics {metrics}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    data = read_sequences(args.data)
    per_seq = [teacher_forced_nll(ck.model, ck.grid, s, build_mask(ck.mask, s.n_agents, s.n_steps))[1] for s in data]
    steps = per_timestep_nll(ck.model, ck.grid, ck.mask, data)
    report = {"mask": ck.mask, "n_sequences": len(data), "mean_nll": float(np.mean(per_seq)),
              "per_timestep_nll": steps.tolist()}
    print(json.dumps(report, indent=2))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_nll"])
            for t, v in enumerate(steps, start=1):
                w.writerow([t, repr(float(v))])
    return EXIT_OK


def _parse_starts(text: str) -> np.ndarray:
    p = Path(text)
    raw = json.loads(p.read_text()) if p.exists() else json.loads(text)
    return np.asarray(raw, dtype=np.float64)


def cmd_rollout(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    starts = _parse_starts(args.starts)
    ids = np.asarray(args.agent_ids if args.agent_ids else range(len(starts)), dtype=np.int64)
    if len(ids) != len(starts):
        raise ValueError(f"{len(starts)} start positions but {len(ids)} agent ids")
    rng = np.random.default_rng(args.seed)
    results = []
    for _ in range(args.count):
        if ck.mask == "lookahead":
            order = rng.permutation(len(ids)) if args.order == "shuffled" else None
            results.append(rollout_agentwise(ck.model, ck.grid, starts, ids, args.steps, rng, order, args.mode))
        elif ck.mask == "baseline":
            results.append(rollout_simultaneous(ck.model, ck.grid, starts, ids, args.steps, rng, args.mode))
        else:
            raise ValueError(f"cannot roll out a {ck.mask!r} model: its mask needs future positions")
    out = _out_path(args.out, "rollouts.jsonl")
    write_sequences(out, [r.sequence for r in results])
    trace = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    with open(trace, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rollout", "t", "k", "agent_id", "chosen_bin", "prob"])
        for i, r in enumerate(results):
            for s in r.trace:
                w.writerow([i, s.t, s.k, s.agent_id, s.chosen_bin, repr(s.prob)])
    print(f"wrote {len(results)} rollouts to {out}; trace {trace}")
    return EXIT_OK


def cmd_audit_mask(args) -> int:
    mask = build_mask(args.mask, args.K, args.T)
    reach = reachability(mask, args.layers)
    leaks = leak_report(mask, args.layers)
    out = _out_path(args.out, f"mask_{args.mask}_K{args.K}_T{args.T}")
    out.mkdir(parents=True, exist_ok=True)
    header = " ".join(str(r) for r in mask.layout)
    (out / "mask.txt").write_text(header + "\n" + mask.to_text() + "\n")
    (out / "reachability.txt").write_text(
        header + "\n" + "\n".join("".join("1" if a else "0" for a in row) for row in reach) + "\n")
    report = {"mask": args.mask, "K": args.K, "T": args.T, "layers": args.layers,
              "leaks": [[str(q), str(s)] for q, s in leaks]}
    if args.trials:
        cfg = ModelConfig(d_model=16, n_heads=2, d_ff=32, n_layers=args.layers, embed_dim=4,
                          mlp_widths=(8, 16), n_bins=9, n_agents_total=max(args.K, 2))
        report["perturbation"] = leakage_audit(cfg, args.mask, args.K, args.T, args.trials, args.seed).summary()
    (out / "leakage.json").write_text(json.dumps(report, indent=2))
    print(json.dumps({**report, "leaks": len(leaks), "first_leaks": report["leaks"][:10]}, indent=2))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_audit_permutation(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    data = read_sequences(args.data)
    res = permutation_audit(ck.model, ck.grid, ck.mask, data, np.random.default_rng(args.seed), args.shuffles)
    out = _out_path(args.out, "permutation_audit.csv")
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["sequence", "unshuffled_nll", "shuffled_nll_mean", "mean_abs_percent_error"])
        w.writeheader()
        w.writerows(res.rows())
    print(json.dumps({"mean_abs_percent_error": res.mean_abs_percent_error, "correlation": res.correlation,
                      "notice": res.notice, "csv": str(out)}, indent=2))
    return EXIT_OK


def cmd_audit_position(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    data = read_sequences(args.data)
    res = position_conditioning_audit(ck.model, ck.grid, ck.mask, data, np.random.default_rng(args.seed),
                                      args.shuffles)
    out = _out_path(args.out, "position_audit.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "agent_id", "first_slot_nll", "last_slot_nll_mean", "percent_improvement"])
        for (i, aid), f, l, c in zip(res.pairs, res.first_slot_nll, res.last_slot_nll, res.percent_change):
            w.writerow([i, aid, repr(float(f)), repr(float(l.mean())), repr(float(c))])
    print(json.dumps({"mean_percent_improvement": res.mean_percent_improvement, "csv": str(out)}, indent=2))
    return EXIT_OK


def cmd_reproduce_toy(args) -> int:
    from .pipeline import reproduce_toy

    out = Path(args.out) if args.out else _out_dir() / "reproduce_toy"
    report = reproduce_toy(args.seed, out, args.epochs, args.samples_per_epoch, args.rollouts, args.eval_count)
    print(report.table())
    print(f"outputs in {out}")
    return EXIT_OK if report.passed else EXIT_THRESHOLD


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coordtraj", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write toy sequences as JSONL")
    g.add_argument("--count", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--steps", type=int, default=20)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--model-config", help="JSON file with ModelConfig fields")
    t.add_argument("--train-config", help="JSON file with TrainConfig fields")
    t.add_argument("--grid", help="JSON file with BinGrid fields (default: toy grid)")
    t.add_argument("--mask", choices=VARIANTS, default="lookahead")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--data", help="JSONL training sequences")
    src.add_argument("--toy", action="store_true", help="stream freshly generated toy sequences (default)")
    t.add_argument("--val", help="JSONL validation sequences")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--metrics", help="metrics CSV path")
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--samples-per-epoch", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-shuffle", action="store_true", help="keep agent order fixed during training")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="teacher-forced NLL of a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--csv", help="write per-timestep NLL CSV")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="generate trajectories from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--starts", required=True, help="inline JSON [[x, y], ...] or a JSON file")
    r.add_argument("--agent-ids", type=int, nargs="+")
    r.add_argument("--order", choices=("given", "shuffled"), default="given")
    r.add_argument("--mode", choices=MODES, default="sample")
    r.add_argument("--count", type=int, default=1)
    r.add_argument("--steps", type=int, default=20)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.add_argument("--trace")
    r.set_defaults(func=cmd_rollout)

    m = sub.add_parser("audit-mask", help="dump mask/reachability and report leaks")
    m.add_argument("--mask", choices=VARIANTS, default="lookahead")
    m.add_argument("--K", type=int, default=2)
    m.add_argument("--T", type=int, default=3)
    m.add_argument("--layers", type=int, default=2)
    m.add_argument("--trials", type=int, default=0, help="also run a perturbation audit with random models")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_audit_mask)

    for name, func, help_ in (("audit-permutation", cmd_audit_permutation, "agent-order permutation audit"),
                              ("audit-position", cmd_audit_position, "first vs last slot conditioning audit")):
        a = sub.add_parser(name, help=help_)
        a.add_argument("--checkpoint", required=True)
        a.add_argument("--data", required=True)
        a.add_argument("--shuffles", type=int, default=10)
        a.add_argument("--seed", type=int, default=0)
        a.add_argument("--out")
        a.set_defaults(func=func)

    y = sub.add_parser("reproduce-toy", help="full toy experiment with threshold checks")
    y.add_argument("--seed", type=int, default=1)
    y.add_argument("--epochs", type=int, default=50)
    y.add_argument("--samples-per-epoch", type=int, default=500)
    y.add_argument("--rollouts", type=int, default=100)
    y.add_argument("--eval-count", type=int, default=200)
    y.add_argument("--out")
    y.set_defaults(func=cmd_reproduce_toy)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {e}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
