"""Durable run persistence and comparison artifacts.

A store is a plain directory: one subdirectory per run holding meta.json,
history.jsonl (one trial per line, flushed as written), report.json,
transcript.jsonl and convergence.csv. Diff-able, greppable, resumable; no
database at this scale.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from pathlib import Path

import numpy as np

from .bo import Trial, TrialHistory
from .errors import DuplicateTrialId, EmptyRun, UnknownRun

METHOD_LABELS = ("Baseline", "BO", "LLM-AutoOpt", "LLM-AutoOpt-NoMeta")

SUMMARY_COLUMNS = ("run", "method", "mean_loss", "loss_std", "mean_t_train", "t_opt")
CONVERGENCE_COLUMNS = ("run", "iteration", "origin", "loss", "incumbent")


class ExperimentStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._trial_index: dict[str, dict[str, dict]] = {}

    def _run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def _require_run(self, run_id: str) -> Path:
        run_dir = self._run_dir(run_id)
        if not (run_dir / "meta.json").exists():
            raise UnknownRun(run_id)
        return run_dir

    def create_run(self, run_id: str, method: str) -> Path:
        if method not in METHOD_LABELS:
            raise ValueError(f"method must be one of {METHOD_LABELS}")
        run_dir = self._run_dir(run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        meta_path = run_dir / "meta.json"
        if not meta_path.exists():
            with open(meta_path, "w", encoding="utf-8") as fh:
                json.dump(
                    {"run_id": run_id, "method": method, "created_at": time.time()},
                    fh,
                )
        return run_dir

    def run_method(self, run_id: str) -> str:
        run_dir = self._require_run(run_id)
        with open(run_dir / "meta.json", encoding="utf-8") as fh:
            return json.load(fh)["method"]

    def _index_for(self, run_id: str) -> dict[str, dict]:
        if run_id not in self._trial_index:
            index = {}
            for trial in self.load_history(run_id):
                index[trial.trial_id] = trial.to_json_dict()
            self._trial_index[run_id] = index
        return self._trial_index[run_id]

    def append_trial(self, run_id: str, trial: Trial) -> None:
        """Durable, idempotent append: flushed and fsynced before returning."""
        run_dir = self._require_run(run_id)
        index = self._index_for(run_id)
        doc = trial.to_json_dict()
        if trial.trial_id in index:
            if index[trial.trial_id] == doc:
                return
            raise DuplicateTrialId(
                f"{trial.trial_id} already stored with different content"
            )
        with open(run_dir / "history.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(doc) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        index[trial.trial_id] = doc

    def load_history(self, run_id: str) -> TrialHistory:
        """Read trials back; a torn final line (crash mid-write) is skipped."""
        run_dir = self._require_run(run_id)
        path = run_dir / "history.jsonl"
        history = TrialHistory()
        if not path.exists():
            return history
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
        for i, line in enumerate(lines):
            line = line.strip()
            if not line:
                continue
            try:
                history.append(Trial.from_json_dict(json.loads(line)))
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    break
                raise
        return history

    def save_report(self, run_id: str, report_doc: dict) -> None:
        run_dir = self._require_run(run_id)
        with open(run_dir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report_doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def load_report(self, run_id: str) -> dict | None:
        run_dir = self._require_run(run_id)
        path = run_dir / "report.json"
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    # --- comparison artifacts ---

    def summary_table(self, run_ids: list[str]) -> list[dict]:
        """One row per run: top-3 mean/std loss, mean training time, total opt time.

        The std is the population (N-denominator) standard deviation over the
        selected trials. Optimization time comes from the run's report when
        present, otherwise from summing the recorded per-trial components.
        """
        rows = []
        for run_id in run_ids:
            method = self.run_method(run_id)
            history = self.load_history(run_id)
            good = sorted(history.successful(), key=lambda t: (t.loss, t.trial_id))
            if not good:
                raise EmptyRun(run_id)
            top = good[:3]
            losses = np.array([t.loss for t in top])
            report = self.load_report(run_id)
            if report and "timing" in report:
                t_opt = report["timing"]["t_opt_bo"] + report["timing"]["t_opt_llm"]
            else:
                t_opt = sum(t.t_acq + t.t_train + t.t_eval for t in history)
            rows.append(
                {
                    "run": run_id,
                    "method": method,
                    "mean_loss": float(losses.mean()),
                    "loss_std": float(losses.std()),
                    "mean_t_train": float(np.mean([t.t_train for t in top])),
                    "t_opt": float(t_opt),
                }
            )
        return rows

    def export_convergence(self, run_ids: list[str]) -> list[dict]:
        """One row per trial in execution order; incumbent is the running minimum."""
        rows = []
        for run_id in run_ids:
            history = self.load_history(run_id)
            best = math.inf
            for i, trial in enumerate(history, start=1):
                if not trial.failed:
                    best = min(best, trial.loss)
                rows.append(
                    {
                        "run": run_id,
                        "iteration": i,
                        "origin": trial.origin,
                        "loss": trial.loss if not trial.failed else None,
                        "incumbent": best if math.isfinite(best) else None,
                    }
                )
        return rows


def rows_to_csv(rows: list[dict], columns: tuple[str, ...]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row[c] is None else row[c] for c in columns])
    return buf.getvalue()


def write_convergence_csv(store: ExperimentStore, run_id: str) -> Path:
    rows = store.export_convergence([run_id])
    path = store._run_dir(run_id) / "convergence.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows, CONVERGENCE_COLUMNS))
    return path
