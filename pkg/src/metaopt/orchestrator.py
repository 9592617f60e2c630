"""Two-phase optimization workflow.

Phase 1 extracts per-feature meta-knowledge and runs the Bayesian-optimization
warm start; phase 2 iterates LLM recommendations against the trust-regioned
space until the incumbent reaches the target loss (warm-start incumbent minus
epsilon) or the iteration budget runs out. Each strict improvement extends the
remaining budget by a fixed step up to a hard cap. Everything is persisted
incrementally so a killed run leaves a parsable directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math
import time
from pathlib import Path

from .bo import (
    ORIGIN_LLM,
    Incumbent,
    Trial,
    TrialHistory,
    run_bo,
)
from .dataset import SeriesDataset, load_dataset, save_csv
from .errors import (
    MissingLatency,
    NonPositiveEpsilon,
    ObjectiveFailure,
    ResponseFormatError,
    TranscriptExhausted,
)
from .gateway import (
    HttpLlmClient,
    LlmEndpointConfig,
    ReplayLlmClient,
    Transcript,
    TranscriptEntry,
)
from .objective import (
    TrainerSpec,
    evaluate_subprocess,
    make_split,
    train_builtin_forecaster,
)
from .prompting import (
    IterationFeedback,
    LlmRecommendation,
    MetaKnowledgeBundle,
    PromptDocument,
    build_prompt,
)
from .prompting import parse_response, validate_recommendation
from .search_space import (
    HyperparamConfig,
    SearchSpace,
    TrustRegion,
    apply_trust_region,
    default_bilstm_space,
)
from .series_stats import describe_dataset
from .store import ExperimentStore, write_convergence_csv

BUILTIN_MODEL_DESCRIPTION = (
    "Feed-forward window forecaster: the last `lag` min-max-scaled values of "
    "every input feature are flattened into one vector; `num_layers` hidden "
    "layers of width `hidden_size` with tanh activations and dropout feed a "
    "linear head that predicts the target feature `horizon` steps ahead. "
    "Trained with minibatch MSE on the scaled targets using the named "
    "optimizer at learning rate `lr` for `epochs` passes; scored by test RMSE "
    "in original units."
)

SUBPROCESS_MODEL_DESCRIPTION = (
    "Bidirectional LSTM forecaster (external trainer): `num_layers` stacked "
    "bidirectional LSTM layers of `hidden_size` units with dropout between "
    "layers, fed lag windows of all features, predicting the target "
    "`horizon` steps ahead; trained with minibatch MSE on min-max-scaled "
    "values using the named optimizer at learning rate `lr` for `epochs` "
    "passes; scored by test RMSE in original units."
)


def compute_target_loss(bo_incumbent_loss: float, epsilon: float) -> float:
    """Stopping threshold: warm-start incumbent loss minus the margin."""
    if epsilon <= 0:
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon}")
    if not math.isfinite(bo_incumbent_loss):
        raise ValueError("incumbent loss must be finite")
    return bo_incumbent_loss - epsilon


_WALLCLOCK_KEYS = frozenset(
    {"t_acq", "t_train", "t_eval", "t_opt_bo", "t_opt_llm", "created_at",
     "timestamp"}
)


def scrub_wallclock_fields(doc):
    """Zero every wall-clock duration so two replayed runs compare byte-equal.

    Recorded completion latencies (t_llm) are replay inputs, not measurements,
    and are deliberately kept.
    """
    if isinstance(doc, dict):
        return {
            k: (0.0 if k in _WALLCLOCK_KEYS else scrub_wallclock_fields(v))
            for k, v in doc.items()
        }
    if isinstance(doc, list):
        return [scrub_wallclock_fields(v) for v in doc]
    return doc


@dataclass
class OptimizationRunConfig:
    dataset_path: str
    target_feature: str
    train_fraction: float = 0.7
    horizon: int = 4
    seasonal_period: int = 24
    seed: int = 0
    epsilon: float = 0.05
    bo_n_init: int = 5
    bo_n_total: int = 15
    llm_base_iterations: int = 5
    max_llm_iterations: int = 15
    budget_extension_step: int = 2
    trust_region_radius: float = 0.25
    trust_region_categorical_policy: str = "any"
    validation_retries: int = 2
    few_shot_examples: int = 0
    model_description: str | None = None
    trainer: TrainerSpec = field(default_factory=TrainerSpec)
    endpoint: LlmEndpointConfig | None = None
    transcript_path: str | None = None
    replay_strict: bool = False
    space: SearchSpace = field(default_factory=default_bilstm_space)

    @staticmethod
    def from_json_file(path: str | Path) -> "OptimizationRunConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return OptimizationRunConfig.from_json_dict(doc)

    @staticmethod
    def from_json_dict(doc: dict) -> "OptimizationRunConfig":
        kwargs = dict(doc)
        if "trainer" in kwargs:
            t = kwargs["trainer"]
            kwargs["trainer"] = TrainerSpec(
                kind=t.get("kind", "builtin"),
                command=tuple(t.get("command", ())),
                timeout=t.get("timeout", 300.0),
                data_path=t.get("data_path"),
            )
        if kwargs.get("endpoint"):
            e = kwargs["endpoint"]
            kwargs["endpoint"] = LlmEndpointConfig(
                base_url=e["base_url"],
                model_name=e["model_name"],
                api_key_env=e.get("api_key_env"),
                temperature=e.get("temperature", 0.2),
                timeout=e.get("timeout", 120.0),
                max_retries=e.get("max_retries", 2),
                max_tokens=e.get("max_tokens"),
            )
        if kwargs.get("space"):
            kwargs["space"] = SearchSpace.from_json_list(kwargs["space"])
        return OptimizationRunConfig(**kwargs)


@dataclass
class TimingBreakdown:
    per_trial: list[dict]
    t_opt_bo: float
    t_opt_llm: float

    def to_json_dict(self) -> dict:
        return {
            "per_trial": self.per_trial,
            "t_opt_bo": self.t_opt_bo,
            "t_opt_llm": self.t_opt_llm,
        }


def aggregate_timing(history: TrialHistory, llm_latencies: dict[str, float]) -> TimingBreakdown:
    """Per-origin totals: acquisition+train+eval for the warm start,
    completion-latency+train+eval for the refinement iterations."""
    per_trial = []
    t_bo = 0.0
    t_llm = 0.0
    for trial in history:
        entry = {
            "trial_id": trial.trial_id,
            "origin": trial.origin,
            "t_train": trial.t_train,
            "t_eval": trial.t_eval,
        }
        if trial.origin == ORIGIN_LLM:
            if trial.trial_id not in llm_latencies:
                raise MissingLatency(trial.trial_id)
            entry["t_llm"] = llm_latencies[trial.trial_id]
            t_llm += entry["t_llm"] + trial.t_train + trial.t_eval
        else:
            entry["t_acq"] = trial.t_acq
            if trial.origin in ("bo-init", "bo-acquired"):
                t_bo += trial.t_acq + trial.t_train + trial.t_eval
        per_trial.append(entry)
    return TimingBreakdown(per_trial=per_trial, t_opt_bo=t_bo, t_opt_llm=t_llm)


@dataclass
class RunReport:
    run_id: str
    method: str
    incumbent_initial: Incumbent
    incumbent_final: Incumbent
    target_loss: float
    epsilon: float
    reached_target: bool
    iterations_used: int
    timing: TimingBreakdown
    iterations: list[dict]
    bundle_snapshot: dict
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        def inc(v: Incumbent) -> dict:
            return {
                "config": v.config.to_json_dict(),
                "loss": v.loss,
                "trial_id": v.trial_id,
            }

        return {
            "run_id": self.run_id,
            "method": self.method,
            "incumbent_initial": inc(self.incumbent_initial),
            "incumbent_final": inc(self.incumbent_final),
            "target_loss": self.target_loss,
            "epsilon": self.epsilon,
            "reached_target": self.reached_target,
            "iterations_used": self.iterations_used,
            "timing": self.timing.to_json_dict(),
            "iterations": self.iterations,
            "bundle_snapshot": self.bundle_snapshot,
            "diagnostics": self.diagnostics,
        }


@dataclass
class _RunContext:
    dataset: SeriesDataset
    objective: object  # callable(config) -> EvalResult
    space: SearchSpace
    store: ExperimentStore | None
    run_id: str | None

    def persist(self, trial: Trial) -> None:
        if self.store is not None:
            self.store.append_trial(self.run_id, trial)


def _build_context(config: OptimizationRunConfig, run_dir: Path | None,
                   store: ExperimentStore | None, run_id: str | None) -> tuple[_RunContext, dict]:
    dataset = load_dataset(config.dataset_path)
    dataset, dropped = dataset.drop_incomplete_rows()
    diagnostics = {"dropped_rows": dropped}
    split = make_split(dataset, config.train_fraction, config.horizon,
                       config.target_feature)

    if config.trainer.kind == "builtin":
        def objective(cfg: HyperparamConfig):
            return train_builtin_forecaster(cfg, split, dataset, seed=config.seed)
    else:
        data_path = config.trainer.data_path
        if data_path is None:
            if run_dir is None:
                raise ValueError("subprocess trainer needs a data_path or a run dir")
            data_path = str(run_dir / "dataset.csv")
            save_csv(dataset, data_path)
        spec = TrainerSpec(kind="subprocess", command=config.trainer.command,
                           timeout=config.trainer.timeout, data_path=data_path)

        def objective(cfg: HyperparamConfig):
            return evaluate_subprocess(spec, cfg, split, dataset, seed=config.seed)

    ctx = _RunContext(dataset=dataset, objective=objective, space=config.space,
                      store=store, run_id=run_id)
    return ctx, diagnostics


def _few_shot_pairs(dataset: SeriesDataset, config: OptimizationRunConfig) -> list:
    if config.few_shot_examples <= 0:
        return []
    target = dataset.values[config.target_feature]
    pairs = []
    window = 8
    for i in range(config.few_shot_examples):
        start = i * window
        end = start + window
        if end + config.horizon >= len(target):
            break
        pairs.append((
            [float(v) for v in target[start:end]],
            float(target[end + config.horizon - 1]),
        ))
    return pairs


def phase1(
    config: OptimizationRunConfig,
    ctx: _RunContext,
    no_meta: bool = False,
) -> tuple[MetaKnowledgeBundle, TrialHistory, Incumbent]:
    """Meta-knowledge extraction plus the warm-start optimization."""
    if no_meta:
        data_meta: list[dict] = []
    else:
        data_meta = describe_dataset(ctx.dataset, config.seasonal_period)["features"]

    history, best = run_bo(
        ctx.objective, ctx.space, config.bo_n_init, config.bo_n_total,
        seed=config.seed, on_trial=ctx.persist,
    )

    region = TrustRegion(
        center=best.config,
        numeric_radius_fraction=config.trust_region_radius,
        categorical_policy=config.trust_region_categorical_policy,
    )
    constrained = apply_trust_region(ctx.space, region)
    target = compute_target_loss(best.loss, config.epsilon)

    if no_meta:
        description = ""
    elif config.model_description is not None:
        description = config.model_description
    elif config.trainer.kind == "builtin":
        description = BUILTIN_MODEL_DESCRIPTION
    else:
        description = SUBPROCESS_MODEL_DESCRIPTION

    bundle = MetaKnowledgeBundle(
        data_meta=data_meta,
        model_description=description,
        history=history,
        constrained_space=constrained,
        target_loss=target,
        few_shot=[] if no_meta else _few_shot_pairs(ctx.dataset, config),
        last_feedback=None,
    )
    return bundle, history, best


def _correction_prompt(prompt: PromptDocument, details: str) -> PromptDocument:
    return PromptDocument(
        system_text=prompt.system_text,
        user_text=(
            prompt.user_text
            + "\n\n## Correction required\nYour previous reply was rejected: "
            + details
            + "\nReply again, following the reply format exactly."
        ),
        schema_text=prompt.schema_text,
    )


def _bundle_snapshot(bundle: MetaKnowledgeBundle) -> dict:
    return {
        "data_meta": bundle.data_meta,
        "model_description": bundle.model_description,
        "constrained_space": bundle.constrained_space.to_json_list(),
        "target_loss": bundle.target_loss,
        "few_shot_count": len(bundle.few_shot),
    }


def phase2(
    bundle: MetaKnowledgeBundle,
    config: OptimizationRunConfig,
    ctx: _RunContext,
    client,
    run_transcript: Transcript,
    initial: Incumbent,
    method: str,
    run_id: str,
    diagnostics: dict,
) -> RunReport:
    """Iterative LLM refinement with retry-on-violation and budget extension."""
    history = bundle.history
    best = initial
    target = bundle.target_loss
    llm_latencies: dict[str, float] = {}
    iteration_records: list[dict] = []

    budget = min(config.llm_base_iterations, config.max_llm_iterations)
    iteration = 0
    reached = best.loss <= target
    note: str | None = None
    exhausted = False

    while iteration < budget and not reached and not exhausted:
        iteration += 1
        trial_id = f"llm_{iteration}"
        bundle.last_feedback = IterationFeedback(
            last_config=iteration_records[-1]["config_obj"] if iteration_records else None,
            last_loss=iteration_records[-1]["loss"] if iteration_records else None,
            incumbent_config=best.config,
            incumbent_loss=best.loss,
            note=note,
        )
        base_prompt = build_prompt(bundle)
        prompt = base_prompt
        t_llm = 0.0
        served_any = False
        recommendation: LlmRecommendation | None = None
        failure_detail = ""
        for _ in range(config.validation_retries + 1):
            try:
                reply, latency = client.complete(prompt)
            except TranscriptExhausted:
                exhausted = True
                failure_detail = "transcript exhausted"
                break
            served_any = True
            t_llm += latency
            if isinstance(client, ReplayLlmClient):
                run_transcript.append(TranscriptEntry(
                    prompt_hash=prompt.hash_key(),
                    prompt_text=prompt.system_text + "\n\n" + prompt.user_text,
                    raw_reply=reply, latency=latency, timestamp=0.0,
                ))
            try:
                parsed = parse_response(reply)
            except ResponseFormatError as exc:
                failure_detail = f"{type(exc).__name__}: {exc}"
                prompt = _correction_prompt(base_prompt, failure_detail)
                continue
            outcome = validate_recommendation(parsed, bundle.constrained_space)
            if isinstance(outcome, list):
                failure_detail = "; ".join(str(v) for v in outcome)
                prompt = _correction_prompt(base_prompt, failure_detail)
                continue
            recommendation = outcome
            break

        if exhausted and not served_any:
            # Transcript ran out before this iteration saw any reply: it never
            # happened, end the refinement loop cleanly.
            iteration -= 1
            break

        if recommendation is None:
            trial = Trial(
                trial_id=trial_id, config=HyperparamConfig({}), loss=None,
                origin=ORIGIN_LLM, error=f"no valid recommendation: {failure_detail}",
            )
            history.append(trial)
            ctx.persist(trial)
            llm_latencies[trial_id] = t_llm
            iteration_records.append({
                "iteration": iteration, "trial_id": trial_id, "config": None,
                "config_obj": None, "loss": None, "reasoning": {},
                "t_llm": t_llm, "improved": False, "budget_after": budget,
                "error": trial.error,
            })
            note = f"iteration {iteration} produced no valid configuration"
            continue

        try:
            result = ctx.objective(recommendation.config)
            loss: float | None = result.loss
            t_train, t_eval = result.t_train, result.t_eval
            error = None
        except ObjectiveFailure as exc:
            loss, t_train, t_eval, error = None, exc.t_train, exc.t_eval, exc.reason

        trial = Trial(
            trial_id=trial_id, config=recommendation.config, loss=loss,
            t_train=t_train, t_eval=t_eval, origin=ORIGIN_LLM, error=error,
        )
        history.append(trial)
        ctx.persist(trial)
        llm_latencies[trial_id] = t_llm

        improved = loss is not None and loss < best.loss
        if improved:
            budget = min(budget + config.budget_extension_step,
                         config.max_llm_iterations)
            best = Incumbent(config=recommendation.config, loss=loss,
                             trial_id=trial_id)
        reached = best.loss <= target
        note = None if error is None else f"iteration {iteration} failed: {error}"

        iteration_records.append({
            "iteration": iteration, "trial_id": trial_id,
            "config": recommendation.config.to_json_dict(),
            "config_obj": recommendation.config, "loss": loss,
            "reasoning": recommendation.reasoning,
            "expected_effect": recommendation.expected_effect,
            "t_llm": t_llm, "improved": improved, "budget_after": budget,
            "error": error,
        })

    timing = aggregate_timing(history, llm_latencies)
    for record in iteration_records:
        record.pop("config_obj", None)
    return RunReport(
        run_id=run_id,
        method=method,
        incumbent_initial=initial,
        incumbent_final=best,
        target_loss=target,
        epsilon=config.epsilon,
        reached_target=reached,
        iterations_used=iteration,
        timing=timing,
        iterations=iteration_records,
        bundle_snapshot=_bundle_snapshot(bundle),
        diagnostics=diagnostics,
    )


def run(
    config: OptimizationRunConfig,
    out_dir: str | Path,
    no_meta: bool = False,
    bo_only: bool = False,
) -> RunReport:
    """Full workflow: phase 1, phase 2 (unless bo_only), persisted artifacts.

    The run directory receives meta.json, history.jsonl (flushed per trial),
    transcript.jsonl, report.json and convergence.csv.
    """
    out_dir = Path(out_dir)
    run_id = out_dir.name
    store = ExperimentStore(out_dir.parent)
    if bo_only:
        method = "BO"
    elif no_meta:
        method = "LLM-AutoOpt-NoMeta"
    else:
        method = "LLM-AutoOpt"
    store.create_run(run_id, method)

    ctx, diagnostics = _build_context(config, out_dir, store, run_id)
    bundle, history, best = phase1(config, ctx, no_meta=no_meta)

    run_transcript = Transcript()
    if bo_only:
        timing = aggregate_timing(history, {})
        report = RunReport(
            run_id=run_id, method=method, incumbent_initial=best,
            incumbent_final=best, target_loss=bundle.target_loss,
            epsilon=config.epsilon, reached_target=best.loss <= bundle.target_loss,
            iterations_used=0, timing=timing, iterations=[],
            bundle_snapshot=_bundle_snapshot(bundle), diagnostics=diagnostics,
        )
    else:
        if config.transcript_path is not None:
            client = ReplayLlmClient(Transcript.load_jsonl(config.transcript_path),
                                     strict=config.replay_strict)
        elif config.endpoint is not None:
            client = HttpLlmClient(config.endpoint, transcript=run_transcript)
        else:
            raise ValueError("need an endpoint or a transcript for the refinement phase")
        report = phase2(bundle, config, ctx, client, run_transcript, best,
                        method, run_id, diagnostics)

    run_transcript.save_jsonl(out_dir / "transcript.jsonl")
    store.save_report(run_id, report.to_json_dict())
    write_convergence_csv(store, run_id)
    return report
