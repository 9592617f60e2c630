"""Command-line entry points.

    metaopt meta <data.csv|data.json> [--seasonal-period N] [--output out.json]
    metaopt bo <run.json> [--out-dir DIR]
    metaopt optimize <run.json> [--no-meta] [--bo-only] [--replay transcript.jsonl]
                     [--strict-replay] [--out-dir DIR]
    metaopt report <run_dir> [--csv]
    metaopt trainer-check <command...>

optimize exits 0 when the target loss was reached, 1 otherwise; bo/bo-only
runs exit 0 on completion.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .dataset import load_dataset, save_csv
from .errors import MetaoptError
from .objective import TrainerSpec, evaluate_subprocess, make_split
from .orchestrator import OptimizationRunConfig, run
from .search_space import HyperparamConfig
from .series_stats import describe_dataset
from .store import (
    CONVERGENCE_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentStore,
    rows_to_csv,
)
from .synthetic import make_ar2_dataset


def _cmd_meta(args) -> int:
    dataset = load_dataset(args.data)
    doc = describe_dataset(dataset, args.seasonal_period)
    text = json.dumps(doc, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.output}")
    else:
        print(text)
    return 0


def _default_out_dir(run_config_path: str) -> Path:
    stem = Path(run_config_path).stem
    return Path.cwd() / "runs" / f"{stem}-{time.strftime('%Y%m%d-%H%M%S')}"


def _cmd_optimize(args, bo_only: bool = False) -> int:
    config = OptimizationRunConfig.from_json_file(args.run_config)
    if getattr(args, "replay", None):
        config.transcript_path = args.replay
        config.replay_strict = bool(getattr(args, "strict_replay", False))
    out_dir = Path(args.out_dir) if args.out_dir else _default_out_dir(args.run_config)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run(
        config, out_dir,
        no_meta=bool(getattr(args, "no_meta", False)),
        bo_only=bo_only or bool(getattr(args, "bo_only", False)),
    )
    print(f"run directory: {out_dir}")
    print(f"method: {report.method}")
    print(f"incumbent after warm start: {report.incumbent_initial.loss:.6g}")
    print(f"final incumbent: {report.incumbent_final.loss:.6g}")
    print(f"target loss: {report.target_loss:.6g}")
    print(f"reached target: {report.reached_target}")
    if report.method == "BO":
        return 0
    return 0 if report.reached_target else 1


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    store = ExperimentStore(run_dir.parent)
    run_id = run_dir.name
    summary = store.summary_table([run_id])
    convergence = store.export_convergence([run_id])
    if args.csv:
        summary_path = run_dir / "summary.csv"
        summary_path.write_text(rows_to_csv(summary, SUMMARY_COLUMNS), encoding="utf-8")
        conv_path = run_dir / "convergence.csv"
        conv_path.write_text(rows_to_csv(convergence, CONVERGENCE_COLUMNS),
                             encoding="utf-8")
        print(f"wrote {summary_path}")
        print(f"wrote {conv_path}")
        return 0
    for row in summary:
        print(
            f"{row['method']}: mean loss {row['mean_loss']:.6g} "
            f"(std {row['loss_std']:.6g}), mean t_train {row['mean_t_train']:.3f}s, "
            f"t_opt {row['t_opt']:.3f}s"
        )
    return 0


def _trainer_check_request(command: list[str], data_path: str, doc: dict,
                           timeout: float):
    spec = TrainerSpec(kind="subprocess", command=tuple(command), timeout=timeout,
                       data_path=data_path)
    dataset = load_dataset(data_path)
    split = make_split(dataset, doc["train_fraction"], doc["horizon"],
                       doc["target_feature"])
    return evaluate_subprocess(spec, HyperparamConfig(doc["config"]), split, dataset,
                               seed=doc["seed"])


def _cmd_trainer_check(args) -> int:
    """Protocol conformance handshake against a synthetic 200-row dataset."""
    import subprocess

    command = args.trainer_cmd
    with tempfile.TemporaryDirectory() as tmp:
        data_path = str(Path(tmp) / "trainer_check.csv")
        save_csv(make_ar2_dataset(n=200, seed=11), data_path)
        request = {
            "config": {
                "lag": 6, "hidden_size": 16, "num_layers": 1, "dropout": 0.1,
                "lr": 1e-3, "batch_size": 32, "epochs": 2, "optimizer": "Adam",
            },
            "train_fraction": 0.7, "horizon": 4, "target_feature": "y", "seed": 3,
        }
        checks: list[tuple[str, bool, str]] = []

        try:
            first = _trainer_check_request(command, data_path, request, args.timeout)
            ok = np.isfinite(first.loss) and first.n_test >= 1
            checks.append(("valid reply schema, finite loss", ok,
                           f"loss={first.loss:.6g}, n_test={first.n_test}"))
        except MetaoptError as exc:
            checks.append(("valid reply schema, finite loss", False, str(exc)))
            first = None

        if first is not None:
            try:
                second = _trainer_check_request(command, data_path, request,
                                                args.timeout)
                same = abs(second.loss - first.loss) <= 1e-6 * max(1.0, abs(first.loss))
                checks.append(("seed determinism", same,
                               f"{first.loss:.6g} vs {second.loss:.6g}"))
            except MetaoptError as exc:
                checks.append(("seed determinism", False, str(exc)))

        bad = {"protocol": "bogus/0", "config": request["config"],
               "data_path": data_path, "train_fraction": 0.7, "horizon": 4,
               "target_feature": "y", "seed": 3}
        proc = subprocess.run(
            list(command), input=json.dumps(bad) + "\n", capture_output=True,
            text=True, timeout=args.timeout,
        )
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        error_ok = False
        detail = f"exit={proc.returncode}, stdout lines={len(lines)}"
        if len(lines) == 1 and proc.returncode != 0:
            try:
                reply = json.loads(lines[0])
                error_ok = isinstance(reply, dict) and "error" in reply
            except json.JSONDecodeError:
                pass
        checks.append(("error object and non-zero exit on bad protocol",
                       error_ok, detail))

    failed = [c for c in checks if not c[1]]
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name} ({detail})")
    return 1 if failed else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="metaopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_meta = sub.add_parser("meta", help="extract meta-features from a dataset")
    p_meta.add_argument("data")
    p_meta.add_argument("--seasonal-period", type=int, default=24)
    p_meta.add_argument("--output")
    p_meta.set_defaults(func=_cmd_meta)

    p_bo = sub.add_parser("bo", help="warm-start optimization only")
    p_bo.add_argument("run_config")
    p_bo.add_argument("--out-dir")
    p_bo.set_defaults(func=lambda a: _cmd_optimize(a, bo_only=True))

    p_opt = sub.add_parser("optimize", help="full two-phase optimization")
    p_opt.add_argument("run_config")
    p_opt.add_argument("--no-meta", action="store_true",
                       help="drop data meta-knowledge and model description from prompts")
    p_opt.add_argument("--bo-only", action="store_true")
    p_opt.add_argument("--replay", help="transcript JSONL to replay instead of a live endpoint")
    p_opt.add_argument("--strict-replay", action="store_true",
                       help="require replayed entries to match prompt hashes")
    p_opt.add_argument("--out-dir")
    p_opt.set_defaults(func=_cmd_optimize)

    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--csv", action="store_true",
                       help="write summary.csv and convergence.csv into the run dir")
    p_rep.set_defaults(func=_cmd_report)

    p_tc = sub.add_parser("trainer-check",
                          help="protocol conformance check for an external trainer")
    p_tc.add_argument("--timeout", type=float, default=600.0)
    p_tc.add_argument("trainer_cmd", nargs=argparse.REMAINDER)
    p_tc.set_defaults(func=_cmd_trainer_check)

    args = parser.parse_args(argv)
    if args.command == "trainer-check" and not args.trainer_cmd:
        parser.error("trainer-check needs the trainer command to run")
    try:
        return args.func(args)
    except MetaoptError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
