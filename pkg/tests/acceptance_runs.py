"""Training runs behind the long acceptance checks.

Runs are deterministic and cached under ``runs/acceptance`` (override with
``CSOLAB_RUNS_DIR``); a cached record is only reused when its config digest
matches, so deleting the directory forces a full retrain.  Running this file
directly trains everything ahead of the test session.
"""
from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

from csolab.experiment import ExperimentConfig, train_run
from csolab.scene import CsoConfig

RUNS_DIR = Path(os.environ.get("CSOLAB_RUNS_DIR", Path(__file__).resolve().parents[1] / "runs" / "acceptance"))

BAR = 0.85
EASY_SEEDS = (0, 1, 2, 3, 4)
ORDER_SEEDS = (0, 1)
ORDER_D = 1000
ORDER_EPOCHS = 10       # same optimizer step count as D=100 for 100 epochs


def easy_config() -> ExperimentConfig:
    return ExperimentConfig(scene=CsoConfig.for_regime("easy"), d=100, epochs=100,
                            base_width=16, sprite_source="synthetic")


def order_config(regime: str) -> ExperimentConfig:
    return ExperimentConfig(scene=CsoConfig.for_regime(regime), d=ORDER_D, epochs=ORDER_EPOCHS,
                            base_width=16, sprite_source="synthetic")


def passes_bar(record) -> bool:
    rep = record.report
    return rep.precision() >= BAR and rep.recall() >= BAR


def easy_runs():
    """Train init seeds in order until "at least 3 of 5" is settled either way."""
    records, need = [], 3
    for seed in EASY_SEEDS:
        records.append(train_run(easy_config(), seed, 0, RUNS_DIR))
        passed = sum(passes_bar(r) for r in records)
        if passed >= need or passed + len(EASY_SEEDS) - len(records) < need:
            break
    return records


def order_runs(regime: str):
    return [train_run(order_config(regime), seed, 0, RUNS_DIR) for seed in ORDER_SEEDS]


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    which = sys.argv[1:] or ["easy", "easy-order", "hard", "strict"]
    for name in which:
        if name == "easy":
            for r in easy_runs():
                print("easy", r.init_seed, r.report.precision(), r.report.recall(), flush=True)
        else:
            regime = "easy" if name == "easy-order" else name
            for r in order_runs(regime):
                print(regime, r.init_seed, r.report.precision(), r.report.recall(), flush=True)
