"""Shared fixtures: seeded synthetic datasets and a workflow-sized run config.

Datasets are regenerated per session from fixed seeds rather than committed,
so the CSVs, the near-optimal config fixture and the golden report all derive
from the same deterministic source (scripts/make_fixtures.py rebuilds the
frozen artifacts).
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from metaopt.dataset import save_csv
from metaopt.search_space import ParamSpec, SearchSpace
from metaopt.synthetic import make_ar2_dataset

DATA_DIR = Path(__file__).parent / "data"

# Compact space for workflow tests: every parameter still does something and
# the low-lr / low-epoch corner is genuinely weak, so warm starts land above
# the noise floor and a tuned configuration has real headroom to improve.
WORKFLOW_SPACE = SearchSpace(
    (
        ParamSpec("lag", "integer-range", low=4, high=16),
        ParamSpec("hidden_size", "integer-range", low=4, high=32),
        ParamSpec("num_layers", "integer-range", low=1, high=2),
        ParamSpec("dropout", "real-range", low=0.0, high=0.5, scale="linear"),
        ParamSpec("lr", "real-range", low=1e-5, high=1e-2, scale="log"),
        ParamSpec("batch_size", "categorical", choices=(32, 64)),
        ParamSpec("epochs", "integer-range", low=1, high=10),
        ParamSpec("optimizer", "categorical", choices=("Adam", "AdamW")),
    )
)


@pytest.fixture(scope="session")
def ar2_csv(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("data") / "ar2.csv"
    save_csv(make_ar2_dataset(n=2000, seed=7), path)
    return path


@pytest.fixture(scope="session")
def ar2_small_csv(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("data") / "ar2_small.csv"
    save_csv(make_ar2_dataset(n=600, seed=11), path)
    return path


def workflow_run_config_dict(dataset_path: str | Path, **overrides) -> dict:
    """Run-config JSON body used by the workflow tests; see conftest docstring."""
    doc = {
        "dataset_path": str(dataset_path),
        "target_feature": "y",
        "train_fraction": 0.7,
        "horizon": 4,
        "seasonal_period": 12,
        "seed": 3,
        "epsilon": 0.05,
        "bo_n_init": 4,
        "bo_n_total": 5,
        "llm_base_iterations": 3,
        "max_llm_iterations": 8,
        "budget_extension_step": 2,
        "trust_region_radius": 1.0,
        "validation_retries": 2,
        "space": WORKFLOW_SPACE.to_json_list(),
    }
    doc.update(overrides)
    return doc


@pytest.fixture
def workflow_config_file(ar2_small_csv, tmp_path):
    def _make(**overrides) -> Path:
        doc = workflow_run_config_dict(ar2_small_csv, **overrides)
        path = tmp_path / "run.json"
        path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
        return path

    return _make
