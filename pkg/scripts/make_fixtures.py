#!/usr/bin/env python3
"""Regenerate the frozen test fixtures.

Produces tests/data/near_optimal_config.json (offline grid search over the
workflow space on the small synthetic dataset) and tests/data/golden_report.json
(the wall-clock-scrubbed report of one canonical replay run). Run from the
repository root after any change to the forecaster, the optimizer loop or the
fixtures themselves, then review the diff before committing.
"""

import itertools
import json
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from conftest import workflow_run_config_dict  # noqa: E402

from metaopt.dataset import save_csv  # noqa: E402
from metaopt.gateway import Transcript  # noqa: E402
from metaopt.objective import make_split, train_builtin_forecaster  # noqa: E402
from metaopt.orchestrator import (  # noqa: E402
    OptimizationRunConfig,
    run,
    scrub_wallclock_fields,
)
from metaopt.search_space import HyperparamConfig  # noqa: E402
from metaopt.synthetic import make_ar2_dataset  # noqa: E402

DATA_DIR = ROOT / "tests" / "data"

GRID = {
    "lag": [8, 12],
    "hidden_size": [16, 32],
    "num_layers": [1],
    "dropout": [0.0],
    "lr": [3e-3, 1e-2],
    "batch_size": [32],
    "epochs": [8, 10],
    "optimizer": ["Adam"],
}

# Must match the seed the workflow run config trains with.
OBJECTIVE_SEED = 3


def grid_search(dataset, split) -> tuple[dict, float]:
    best_cfg, best_loss = None, float("inf")
    keys = list(GRID)
    for combo in itertools.product(*(GRID[k] for k in keys)):
        cfg = HyperparamConfig(dict(zip(keys, combo)))
        result = train_builtin_forecaster(cfg, split, dataset, seed=OBJECTIVE_SEED)
        if result.loss < best_loss:
            best_cfg, best_loss = cfg.assignments, result.loss
    return best_cfg, best_loss


def main() -> int:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    dataset = make_ar2_dataset(n=600, seed=11)
    split = make_split(dataset, 0.7, 4, "y")

    best_cfg, best_loss = grid_search(dataset, split)
    fixture = {"config": best_cfg, "loss": best_loss,
               "grid": GRID, "objective_seed": OBJECTIVE_SEED}
    (DATA_DIR / "near_optimal_config.json").write_text(
        json.dumps(fixture, indent=2) + "\n", encoding="utf-8")
    print(f"near-optimal config: loss {best_loss:.5f} {best_cfg}")

    # canonical replay run for the golden report
    tmp = Path(tempfile.mkdtemp())
    try:
        csv_path = tmp / "ar2_small.csv"
        save_csv(dataset, csv_path)
        reply = json.dumps({**best_cfg,
                            "reasoning": {k: "tuned" for k in best_cfg}})
        transcript_path = tmp / "golden_transcript.jsonl"
        Transcript.from_replies([reply, reply]).save_jsonl(transcript_path)
        doc = workflow_run_config_dict(csv_path,
                                       transcript_path=str(transcript_path))
        config = OptimizationRunConfig.from_json_dict(doc)
        report = run(config, tmp / "golden")
        scrubbed = scrub_wallclock_fields(report.to_json_dict())
        (DATA_DIR / "golden_report.json").write_text(
            json.dumps(scrubbed, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        print(f"golden report: reached_target={report.reached_target}, "
              f"final {report.incumbent_final.loss:.5f}")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
