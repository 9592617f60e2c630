"""Command-line surface: subcommands, exit codes, emitted files."""

import json
import sys
import textwrap

from metaopt.cli import main
from metaopt.gateway import Transcript
from metaopt.series_stats import MetaFeatureVector

from test_orchestrator import NEAR_OPTIMAL, _reply

FIELD_NAMES = list(MetaFeatureVector.__dataclass_fields__)


class TestMeta:
    def test_json_document_shape(self, ar2_small_csv, tmp_path):
        out = tmp_path / "meta.json"
        code = main(["meta", str(ar2_small_csv), "--seasonal-period", "12",
                     "--output", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert [f["feature"] for f in doc["features"]] == ["y", "x"]
        for feature in doc["features"]:
            assert list(feature["meta_features"]) == FIELD_NAMES
            assert set(feature["summary"]) == {
                "temporal_dependence", "stationarity", "trend", "seasonality",
                "noise_level", "narrative",
            }

    def test_prints_to_stdout_without_output(self, ar2_small_csv, capsys):
        assert main(["meta", str(ar2_small_csv)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert "features" in doc


class TestOptimize:
    def _transcript(self, tmp_path, replies):
        path = tmp_path / "transcript.jsonl"
        Transcript.from_replies(replies).save_jsonl(path)
        return path

    def test_replay_run_exit_zero_on_target(self, workflow_config_file, tmp_path):
        transcript = self._transcript(tmp_path, [_reply(NEAR_OPTIMAL)] * 2)
        cfg = workflow_config_file()
        out_dir = tmp_path / "cli-run"
        code = main(["optimize", str(cfg), "--replay", str(transcript),
                     "--out-dir", str(out_dir)])
        assert code == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["reached_target"] is True

    def test_exit_one_when_target_missed(self, workflow_config_file, tmp_path):
        transcript = self._transcript(tmp_path, ["garbage"] * 6)
        cfg = workflow_config_file()
        out_dir = tmp_path / "cli-miss"
        code = main(["optimize", str(cfg), "--replay", str(transcript),
                     "--out-dir", str(out_dir)])
        assert code == 1

    def test_bo_subcommand(self, workflow_config_file, tmp_path):
        cfg = workflow_config_file()
        out_dir = tmp_path / "cli-bo"
        assert main(["bo", str(cfg), "--out-dir", str(out_dir)]) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["method"] == "BO" and report["iterations_used"] == 0

    def test_no_meta_flag(self, workflow_config_file, tmp_path):
        transcript = self._transcript(tmp_path, [_reply(NEAR_OPTIMAL)] * 2)
        cfg = workflow_config_file()
        out_dir = tmp_path / "cli-nometa"
        main(["optimize", str(cfg), "--no-meta", "--replay", str(transcript),
              "--out-dir", str(out_dir)])
        report = json.loads((out_dir / "report.json").read_text())
        assert report["method"] == "LLM-AutoOpt-NoMeta"


class TestReport:
    def test_summary_and_csv(self, workflow_config_file, tmp_path, capsys):
        transcript = tmp_path / "t.jsonl"
        Transcript.from_replies([_reply(NEAR_OPTIMAL)] * 2).save_jsonl(transcript)
        cfg = workflow_config_file()
        out_dir = tmp_path / "rep-run"
        main(["optimize", str(cfg), "--replay", str(transcript),
              "--out-dir", str(out_dir)])
        capsys.readouterr()

        assert main(["report", str(out_dir)]) == 0
        text = capsys.readouterr().out
        assert "LLM-AutoOpt" in text and "mean loss" in text

        assert main(["report", str(out_dir), "--csv"]) == 0
        summary = (out_dir / "summary.csv").read_text().splitlines()
        assert summary[0] == "run,method,mean_loss,loss_std,mean_t_train,t_opt"
        convergence = (out_dir / "convergence.csv").read_text().splitlines()
        assert convergence[0] == "run,iteration,origin,loss,incumbent"


STUB_TRAINER = textwrap.dedent("""
    import json, sys
    request = json.loads(sys.stdin.readline())
    if request.get("protocol") != "metaopt-trainer/1":
        print(json.dumps({"error": "unknown protocol"}))
        sys.exit(2)
    seed = request["seed"]
    print(json.dumps({"loss": 1.0 + seed * 0.001, "t_train": 0.01,
                      "t_eval": 0.01, "n_test": 42}))
""")


class TestTrainerCheck:
    def test_conformant_stub_passes(self, tmp_path, capsys):
        script = tmp_path / "stub.py"
        script.write_text(STUB_TRAINER, encoding="utf-8")
        code = main(["trainer-check", sys.executable, str(script)])
        out = capsys.readouterr().out
        assert code == 0, out
        assert out.count("[PASS]") == 3

    def test_nonconformant_stub_fails(self, tmp_path, capsys):
        script = tmp_path / "bad.py"
        script.write_text("print('hello, not json')", encoding="utf-8")
        code = main(["trainer-check", sys.executable, str(script)])
        assert code == 1
