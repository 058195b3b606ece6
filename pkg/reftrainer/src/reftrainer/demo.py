"""Matched (trainer config, controller scenario) pairs for demo runs.

The demo setup: one specialty-heavy target dataset plus a general-corpus
regularizer; the target evaluation domain shares the target blend while two
constrained domains stay general, so over-specializing degrades them and
mixing the regularizer protects them. Starting from zero weights every
domain's reference loss is ln(classes) (uniform predictions), and
specialization can push general-domain losses above it: forgetting is real.

Usage:

    python -m reftrainer.demo --seed 1 --config cfg.json --scenario scenario.json
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path


def make_demo(seed: int, total_steps: int = 256, eval_every: int = 32
              ) -> tuple[dict, dict]:
    config = {
        "feature_dim": 12,
        "classes": 5,
        "components": 2,            # 0: general, 1: specialty
        "temperature": 0.7,
        "learning_rate": 0.03,
        "batch_size": 16,
        "seed": seed,
        "datasets": [
            {"id": "specialty", "components": [0.1, 0.9], "n_samples": 1024},
            {"id": "general", "components": [1.0, 0.0], "n_samples": 8192},
        ],
        "domains": [
            {"id": "specialty_eval", "components": [0.1, 0.9],
             "n_eval": 512, "n_test": 512},
            {"id": "general_a", "components": [0.95, 0.05],
             "n_eval": 512, "n_test": 512},
            {"id": "general_b", "components": [0.9, 0.1],
             "n_eval": 512, "n_test": 512},
        ],
    }
    scenario = {
        "datasets": [
            {"id": "specialty", "role": "target", "sample_budget": 1024},
            {"id": "general", "role": "non_target"},
        ],
        "eval_domains": [
            {"id": "specialty_eval", "role": "target", "metric": "loss"},
            {"id": "general_a", "role": "constrained", "metric": "loss"},
            {"id": "general_b", "role": "constrained", "metric": "loss"},
        ],
        "total_steps": total_steps,
        "batch_size": 16,
        "eval_every": eval_every,
        "eval_batches_full": 32,
        "eval_batches_reduced": 8,
        "seed": seed,
    }
    return config, scenario


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=256)
    parser.add_argument("--config", default="reftrainer_config.json")
    parser.add_argument("--scenario", default="reftrainer_scenario.json")
    args = parser.parse_args(argv)
    config, scenario = make_demo(args.seed, total_steps=args.steps)
    Path(args.config).write_text(json.dumps(config, indent=2) + "\n")
    Path(args.scenario).write_text(json.dumps(scenario, indent=2) + "\n")
    print(f"wrote {args.config} and {args.scenario}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
