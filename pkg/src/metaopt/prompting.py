"""Structured prompt assembly and strict parsing of configuration replies.

The prompt layout is versioned ("metaopt-prompt/1") and byte-deterministic:
the same bundle always renders to the same text, numeric values are cut to 6
significant digits, and the rendered history is capped at the 10 best trials.
Replies must be a single JSON object with one key per hyperparameter plus a
"reasoning" object; duplicate keys are rejected on raw token order before any
dict collapses them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import re

from .bo import TrialHistory
from .errors import DuplicateKey, MultipleObjects, NotJson, TrailingContent
from .search_space import (
    CATEGORICAL,
    INTEGER_RANGE,
    HyperparamConfig,
    SearchSpace,
    Violation,
    validate_config,
)

PROMPT_VERSION = "metaopt-prompt/1"
HISTORY_CAP = 10

SYSTEM_TEXT = (
    f"You are a hyperparameter optimization assistant ({PROMPT_VERSION}). "
    "You recommend one new hyperparameter configuration for a time-series "
    "forecasting model, reasoning from the dataset characteristics, the model "
    "description, the trial history and the search-space bounds you are given. "
    "You reply with exactly one JSON object and nothing else."
)

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


@dataclass
class IterationFeedback:
    """What the previous iteration produced, echoed back into the next prompt."""

    last_config: HyperparamConfig | None
    last_loss: float | None
    incumbent_config: HyperparamConfig
    incumbent_loss: float
    note: str | None = None


@dataclass
class MetaKnowledgeBundle:
    """Everything the refinement prompt is built from."""

    data_meta: list[dict]  # per feature: {feature, meta_features, summary}
    model_description: str
    history: TrialHistory
    constrained_space: SearchSpace
    target_loss: float
    few_shot: list[tuple[list[float], float]] = field(default_factory=list)
    last_feedback: IterationFeedback | None = None


@dataclass(frozen=True)
class PromptDocument:
    system_text: str
    user_text: str
    schema_text: str

    def hash_key(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for part in (self.system_text, self.user_text, self.schema_text):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


@dataclass
class LlmRecommendation:
    config: HyperparamConfig
    reasoning: dict[str, str]
    expected_effect: str | None = None


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _render_json_value(value):
    if isinstance(value, float):
        return float(f"{value:.6g}")
    if isinstance(value, dict):
        return {k: _render_json_value(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_render_json_value(v) for v in value]
    return value


def _render_config(config: HyperparamConfig, space: SearchSpace) -> str:
    parts = []
    for name in space.names:
        if name in config.assignments:
            parts.append(f"{name}={_fmt(config[name])}")
    for name in sorted(set(config.assignments) - set(space.names)):
        parts.append(f"{name}={_fmt(config[name])}")
    return ", ".join(parts)


def build_schema_text(space: SearchSpace) -> str:
    """The reply contract: exactly the space's parameter names plus reasoning."""
    lines = ["Reply with exactly one JSON object with exactly these keys:"]
    for spec in space.params:
        if spec.kind == CATEGORICAL:
            lines.append(f'- "{spec.name}": one of {json.dumps(list(spec.choices))}')
        elif spec.kind == INTEGER_RANGE:
            lines.append(f'- "{spec.name}": integer in [{_fmt(spec.low)}, {_fmt(spec.high)}]')
        else:
            lines.append(f'- "{spec.name}": number in [{_fmt(spec.low)}, {_fmt(spec.high)}]')
    lines.append(
        '- "reasoning": object mapping each hyperparameter name to a short '
        "justification string"
    )
    lines.append(
        "No other keys, no duplicate keys, no prose outside the JSON object."
    )
    return "\n".join(lines)


def build_prompt(bundle: MetaKnowledgeBundle) -> PromptDocument:
    """Render the bundle into the fixed eight-section prompt layout."""
    space = bundle.constrained_space
    out: list[str] = []

    out.append("## 1. Task")
    out.append(
        "Find the hyperparameter configuration, within the search space below, "
        "that minimizes the validation RMSE of the forecasting model trained "
        "on this dataset. Training is stochastic; reason about expected "
        "validation loss."
    )

    out.append("")
    out.append("## 2. Dataset meta-knowledge")
    if bundle.data_meta:
        for entry in bundle.data_meta:
            out.append(f"### Feature: {entry['feature']}")
            summary = entry.get("summary") or {}
            for sentence in summary.get("narrative", []):
                out.append(f"- {sentence}")
            labels = {k: v for k, v in summary.items() if k != "narrative"}
            if labels:
                out.append("Labels: " + json.dumps(labels, sort_keys=True))
            out.append(
                "Meta-features: "
                + json.dumps(_render_json_value(entry["meta_features"]))
            )
    else:
        out.append("(not provided)")

    out.append("")
    out.append("## 3. Model description")
    out.append(bundle.model_description if bundle.model_description else "(not provided)")

    out.append("")
    out.append("## 4. Optimization history (best first)")
    ranked = sorted(
        [t for t in bundle.history if not t.failed], key=lambda t: (t.loss, t.trial_id)
    )[:HISTORY_CAP]
    if ranked:
        for t in ranked:
            out.append(
                f"- {t.trial_id} [{t.origin}] loss={_fmt(t.loss)}: "
                + _render_config(t.config, space)
            )
    else:
        out.append("(no successful trials yet)")
    if bundle.last_feedback is not None:
        fb = bundle.last_feedback
        if fb.last_config is not None:
            loss_text = _fmt(fb.last_loss) if fb.last_loss is not None else "failed"
            out.append(
                f"Previous recommendation: {_render_config(fb.last_config, space)} "
                f"-> loss {loss_text}"
            )
        if fb.note:
            out.append(f"Note: {fb.note}")
        out.append(
            f"Current best: {_render_config(fb.incumbent_config, space)} "
            f"-> loss {_fmt(fb.incumbent_loss)}"
        )

    out.append("")
    out.append("## 5. Search space (explicit bounds; stay strictly inside)")
    out.append(json.dumps(_render_json_value(space.to_json_list()), indent=2))

    out.append("")
    out.append("## 6. Target loss")
    out.append(
        f"Reach a validation RMSE of at most {_fmt(bundle.target_loss)}. "
        "Recommend the configuration you expect to get closest to or below "
        "this target."
    )

    if bundle.few_shot:
        out.append("")
        out.append("## 7. Representative input-output examples")
        for window, target in bundle.few_shot:
            out.append(
                f"- input window {json.dumps(_render_json_value(list(window)))} "
                f"-> next value {_fmt(target)}"
            )

    out.append("")
    out.append("## 8. Reply format")
    schema_text = build_schema_text(space)
    out.append(schema_text)

    return PromptDocument(
        system_text=SYSTEM_TEXT,
        user_text="\n".join(out),
        schema_text=schema_text,
    )


def _strip_fences(text: str) -> str:
    blocks = _FENCE_RE.findall(text)
    if blocks:
        return "\n".join(b.strip() for b in blocks)
    return text


def _scan_objects(text: str) -> list[tuple[int, int]]:
    """Spans of top-level {...} groups, ignoring braces inside JSON strings."""
    spans = []
    depth = 0
    start = -1
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"' and depth > 0:
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    spans.append((start, i + 1))
    return spans


def _reject_duplicates(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise DuplicateKey(key)
        seen.add(key)
    return dict(pairs)


def parse_response(raw: str) -> dict:
    """Extract the single JSON object a reply must consist of.

    Code fences are stripped first; after that the text must contain exactly
    one top-level object with nothing but whitespace after it, and no
    duplicate keys anywhere (checked on raw token order).
    """
    text = _strip_fences(raw).strip()
    spans = _scan_objects(text)
    if len(spans) == 0:
        raise NotJson("no JSON object found in reply")
    if len(spans) > 1:
        raise MultipleObjects(f"found {len(spans)} JSON objects")
    start, end = spans[0]
    if text[end:].strip():
        raise TrailingContent(f"content after JSON object: {text[end:][:80]!r}")
    try:
        return json.loads(text[start:end], object_pairs_hook=_reject_duplicates)
    except DuplicateKey:
        raise
    except json.JSONDecodeError as exc:
        raise NotJson(f"malformed JSON object: {exc}")


def _alias_map(space: SearchSpace) -> dict[str, dict[str, object]]:
    """Lowercased spellings of string choices map to their canonical value."""
    aliases: dict[str, dict[str, object]] = {}
    for spec in space.params:
        if spec.kind != CATEGORICAL:
            continue
        table = {}
        for choice in spec.choices:
            if isinstance(choice, str):
                table[choice.lower()] = choice
        if table:
            aliases[spec.name] = table
    return aliases


def validate_recommendation(
    parsed: dict, constrained_space: SearchSpace
) -> LlmRecommendation | list[Violation]:
    """Coerce and check a parsed reply against the constrained space.

    Integer-valued JSON numbers are accepted for integer parameters, known
    lowercase spellings of string choices are normalized, and everything else
    must hit the bounds exactly. The reasoning object is carried along for the
    report but never interpreted.
    """
    violations: list[Violation] = []
    if not isinstance(parsed, dict):
        return [Violation(None, "reply is not a JSON object")]

    reasoning_raw = parsed.get("reasoning", {})
    expected_effect = parsed.get("expected_effect")
    param_names = set(constrained_space.names)

    extra = set(parsed) - param_names - {"reasoning", "expected_effect"}
    for key in sorted(extra):
        violations.append(Violation(key, "unknown key in reply"))

    if not isinstance(reasoning_raw, dict):
        violations.append(Violation("reasoning", "must be an object"))
        reasoning_raw = {}
    reasoning: dict[str, str] = {}
    for key, value in reasoning_raw.items():
        if key not in param_names:
            violations.append(Violation("reasoning", f"unknown parameter {key!r}"))
        elif not isinstance(value, str):
            violations.append(Violation("reasoning", f"justification for {key!r} must be a string"))
        else:
            reasoning[key] = value
    if expected_effect is not None and not isinstance(expected_effect, str):
        violations.append(Violation("expected_effect", "must be a string"))
        expected_effect = None

    aliases = _alias_map(constrained_space)
    assignments = {}
    for spec in constrained_space.params:
        if spec.name not in parsed:
            violations.append(Violation(spec.name, "missing parameter"))
            continue
        value = parsed[spec.name]
        if spec.kind == INTEGER_RANGE and isinstance(value, float) and value.is_integer():
            value = int(value)
        if spec.kind == CATEGORICAL:
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if isinstance(value, str):
                value = aliases.get(spec.name, {}).get(value.lower(), value)
        assignments[spec.name] = value

    config = HyperparamConfig(assignments)
    verdict = validate_config(constrained_space, config)
    violations.extend(
        v for v in verdict.violations if v.reason != "missing parameter"
    )
    if violations:
        return violations
    return LlmRecommendation(
        config=config, reasoning=reasoning, expected_effect=expected_effect
    )
