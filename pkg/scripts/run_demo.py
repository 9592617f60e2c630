#!/usr/bin/env python3
"""Offline demonstration of the full two-phase workflow.

Generates a seeded synthetic dataset, runs the warm start plus a refinement
phase replayed from a scripted transcript (no LLM endpoint needed), and prints
the summary table and convergence rows. Artifacts land in ./runs/demo/.

    python3 scripts/run_demo.py [--out-dir runs/demo]
"""

import argparse
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from conftest import workflow_run_config_dict  # noqa: E402

from metaopt.dataset import save_csv  # noqa: E402
from metaopt.gateway import Transcript  # noqa: E402
from metaopt.orchestrator import OptimizationRunConfig, run  # noqa: E402
from metaopt.store import ExperimentStore  # noqa: E402
from metaopt.synthetic import make_ar2_dataset  # noqa: E402


def scripted_replies(count: int = 4) -> list[str]:
    """Stand-in for a live model: recommend increasingly tuned configurations."""
    ladder = [
        {"lag": 6, "hidden_size": 8, "num_layers": 1, "dropout": 0.2,
         "lr": 1e-3, "batch_size": 64, "epochs": 4, "optimizer": "Adam"},
        {"lag": 8, "hidden_size": 16, "num_layers": 1, "dropout": 0.1,
         "lr": 3e-3, "batch_size": 32, "epochs": 6, "optimizer": "Adam"},
        {"lag": 12, "hidden_size": 16, "num_layers": 1, "dropout": 0.0,
         "lr": 1e-2, "batch_size": 32, "epochs": 10, "optimizer": "Adam"},
        {"lag": 12, "hidden_size": 32, "num_layers": 1, "dropout": 0.0,
         "lr": 1e-2, "batch_size": 32, "epochs": 10, "optimizer": "Adam"},
    ]
    replies = []
    for config in ladder[:count]:
        replies.append(json.dumps({
            **config,
            "reasoning": {k: "scripted demo recommendation" for k in config},
        }))
    return replies


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs/demo")
    args = parser.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset = make_ar2_dataset(n=600, seed=11)
    csv_path = out_dir / "dataset.csv"
    save_csv(dataset, csv_path)

    transcript_path = out_dir / "scripted_transcript.jsonl"
    Transcript.from_replies(scripted_replies()).save_jsonl(transcript_path)

    doc = workflow_run_config_dict(csv_path, transcript_path=str(transcript_path),
                                   llm_base_iterations=4)
    config = OptimizationRunConfig.from_json_dict(doc)
    report = run(config, out_dir / "demo-run")

    print()
    print(f"warm-start incumbent : {report.incumbent_initial.loss:.5f}")
    print(f"target loss          : {report.target_loss:.5f}")
    print(f"final incumbent      : {report.incumbent_final.loss:.5f}")
    print(f"reached target       : {report.reached_target} "
          f"after {report.iterations_used} refinement iteration(s)")
    print(f"optimization time    : warm start {report.timing.t_opt_bo:.2f}s, "
          f"refinement {report.timing.t_opt_llm:.2f}s")

    store = ExperimentStore(out_dir)
    print("\nconvergence (iteration, origin, loss, incumbent):")
    for row in store.export_convergence(["demo-run"]):
        loss = "failed" if row["loss"] is None else f"{row['loss']:.5f}"
        print(f"  {row['iteration']:>2} {row['origin']:<12} {loss:>9} "
              f"{row['incumbent']:.5f}")
    print(f"\nartifacts in {out_dir / 'demo-run'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
