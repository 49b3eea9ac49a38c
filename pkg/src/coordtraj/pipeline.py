"""End-to-end toy experiment: data, both models, rollouts, audits, threshold checks."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .evaluation import per_timestep_nll, permutation_audit, position_conditioning_audit
from .generation import rollout_agentwise, rollout_simultaneous
from .model import TOY_MODEL_CONFIG, ModelConfig
from .sequence import write_sequences
from .toyworld import ToyConfig, coordination_score, generate_toy_dataset, toy_stream
from .training import TrainConfig, TrainResult, train, write_metrics_csv
from .trajectory_space import TOY_GRID

log = logging.getLogger(__name__)

# acceptance thresholds for the toy experiment
BASELINE_NLL_RANGE = (2.0, 2.4)
LOOKAHEAD_NLL_RANGE = (0.9, 1.3)
MIN_LOOKAHEAD_COORDINATION = 0.99
BASELINE_COORDINATION_RANGE = (0.08, 0.15)
MAX_PERMUTATION_PERCENT_ERROR = 5.0
MIN_PERMUTATION_CORRELATION = 0.99
MIN_POSITION_IMPROVEMENT = 80.0


@dataclass
class Check:
    name: str
    value: float
    expected: str
    passed: bool


@dataclass
class ToyReport:
    baseline: TrainResult
    lookahead: TrainResult
    checks: list[Check] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def table(self) -> str:
        lines = [f"{'check':<34} {'value':>10}  {'expected':<18} result"]
        for c in self.checks:
            lines.append(f"{c.name:<34} {c.value:>10.4f}  {c.expected:<18} {'PASS' if c.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [c.__dict__ for c in self.checks],
            **self.extra,
        }


def _in(value, lo, hi) -> bool:
    return lo <= value <= hi


def train_toy_model(variant: str, seed: int, train_cfg: TrainConfig, model_cfg: ModelConfig = TOY_MODEL_CONFIG,
                    toy_cfg: ToyConfig = ToyConfig(), val_count: int = 200) -> TrainResult:
    val = generate_toy_dataset(toy_cfg, val_count, seed + 1)
    source = toy_stream(toy_cfg, np.random.default_rng(seed))
    return train(model_cfg, train_cfg, source, val, TOY_GRID, variant)


def reproduce_toy(seed: int = 1, out_dir=None, epochs: int = 50, samples_per_epoch: int = 500,
                  n_rollouts: int = 100, n_eval: int = 200, toy_cfg: ToyConfig = ToyConfig()) -> ToyReport:
    train_cfg = TrainConfig(epochs=epochs, samples_per_epoch=samples_per_epoch, seed=seed)
    results = {}
    for variant in ("baseline", "lookahead"):
        t0 = time.perf_counter()
        results[variant] = train_toy_model(variant, seed, train_cfg, toy_cfg=toy_cfg)
        log.info("trained %s in %.1fs", variant, time.perf_counter() - t0)
    base, look = results["baseline"], results["lookahead"]

    rng = np.random.default_rng(seed + 3)
    starts = np.asarray(toy_cfg.start_offsets)
    ids = np.arange(len(starts))
    agentwise = [
        rollout_agentwise(look.model, TOY_GRID, starts, ids, toy_cfg.n_steps, rng,
                          order=rng.permutation(len(ids)), mode="bin_center")
        for _ in range(n_rollouts)
    ]
    simultaneous = [
        rollout_simultaneous(base.model, TOY_GRID, starts, ids, toy_cfg.n_steps, rng, mode="bin_center")
        for _ in range(n_rollouts)
    ]
    look_coord = float(np.mean([coordination_score(r.sequence) for r in agentwise]))
    base_coord = float(np.mean([coordination_score(r.sequence) for r in simultaneous]))

    test = generate_toy_dataset(toy_cfg, n_eval, seed + 2)
    perm = permutation_audit(look.model, TOY_GRID, "lookahead", test, np.random.default_rng(seed + 4))
    posn = position_conditioning_audit(look.model, TOY_GRID, "lookahead", test, np.random.default_rng(seed + 5))

    base_nll = base.metrics[-1].train_nll
    look_nll = look.metrics[-1].train_nll
    checks = [
        Check("baseline final train NLL", base_nll, "[2.0, 2.4]", _in(base_nll, *BASELINE_NLL_RANGE)),
        Check("lookahead final train NLL", look_nll, "[0.9, 1.3]", _in(look_nll, *LOOKAHEAD_NLL_RANGE)),
        Check("lookahead coordination (agentwise)", look_coord, ">= 0.99", look_coord >= MIN_LOOKAHEAD_COORDINATION),
        Check("baseline coordination (simult.)", base_coord, "[0.08, 0.15]", _in(base_coord, *BASELINE_COORDINATION_RANGE)),
        Check("permutation mean |% error|", perm.mean_abs_percent_error, "<= 5",
              perm.mean_abs_percent_error <= MAX_PERMUTATION_PERCENT_ERROR),
        Check("permutation correlation", perm.correlation, ">= 0.99",
              bool(perm.correlation >= MIN_PERMUTATION_CORRELATION)),
        Check("position conditioning % improvement", posn.mean_percent_improvement, ">= 80",
              posn.mean_percent_improvement >= MIN_POSITION_IMPROVEMENT),
    ]
    report = ToyReport(base, look, checks)
    report.extra = {
        "seed": seed,
        "baseline_best_val_nll": base.best_val_nll,
        "lookahead_best_val_nll": look.best_val_nll,
        "lookahead_per_timestep_nll": per_timestep_nll(look.model, TOY_GRID, "lookahead", test).tolist(),
        "baseline_per_timestep_nll": per_timestep_nll(base.model, TOY_GRID, "baseline", test).tolist(),
    }
    report.rollouts = {"agentwise": agentwise, "simultaneous": simultaneous}
    report.audits = {"permutation": perm, "position": posn}

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for variant, res in results.items():
            save_checkpoint(out / f"{variant}.ckpt", res.model, TOY_GRID, variant,
                            train_cfg.to_dict(), [m.__dict__ for m in res.metrics])
            write_metrics_csv(out / f"{variant}_metrics.csv", res.metrics)
        write_sequences(out / "test.jsonl", test)
        write_sequences(out / "rollouts_lookahead.jsonl", [r.sequence for r in agentwise])
        write_sequences(out / "rollouts_baseline.jsonl", [r.sequence for r in simultaneous])
        (out / "summary.json").write_text(json.dumps(report.to_dict(), indent=2))
    return report
