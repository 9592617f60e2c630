"""Exception hierarchy shared across the framework.

Validation verdicts (bad configs, bad LLM replies) are returned as data, not
raised; exceptions here mark conditions a caller cannot sensibly continue
from, or per-trial failures the run loop records and skips.
"""


class MetaoptError(Exception):
    """Base class for every framework error."""


# --- series statistics ---

class EmptySeries(MetaoptError):
    """All observations of a series are missing."""


class NonPositivePeriod(MetaoptError):
    """Seasonal period below 2 cannot define a decomposition."""


class ZeroVariance(MetaoptError):
    """Constant series: autocorrelation / decomposition denominators are 0."""


class InsufficientLength(MetaoptError):
    """Series too short for the requested statistic."""


class SingularDesign(MetaoptError):
    """Rank-deficient regression matrix in the unit-root test."""


# --- search space ---

class InvalidConfig(MetaoptError):
    """Configuration does not validate against the search space."""


class DegenerateRegion(MetaoptError):
    """Trust region shrank a parameter to an empty range."""


# --- Bayesian optimization ---

class TooFewTrials(MetaoptError):
    """Surrogate fitting needs at least two successful trials."""


class IllConditioned(MetaoptError):
    """Kernel matrix stayed non positive definite after the jitter ladder."""


class NoSuccessfulTrials(MetaoptError):
    """Every trial failed, no incumbent exists."""


# --- objective runtime ---

class TooShort(MetaoptError):
    """Dataset too short for the requested split or windows."""


class ConstantFeature(MetaoptError):
    """A feature is constant on the training segment; min-max scaling undefined."""


class MissingValues(MetaoptError):
    """Training requires complete rows; the dataset still contains NAs."""


class LengthMismatch(MetaoptError):
    """Paired sequences differ in length."""


class EmptyInput(MetaoptError):
    """An operation received an empty sequence."""


class ObjectiveFailure(MetaoptError):
    """A single objective evaluation failed; the trial is recorded as failed.

    Carries whatever timing was spent before the failure so the run's
    accounting stays honest.
    """

    def __init__(self, reason: str, t_train: float = 0.0, t_eval: float = 0.0,
                 diagnostics: dict | None = None):
        super().__init__(reason)
        self.reason = reason
        self.t_train = t_train
        self.t_eval = t_eval
        self.diagnostics = diagnostics or {}


class NonFiniteLoss(ObjectiveFailure):
    """Training diverged: a weight or loss became non-finite."""


class TrainerTimeout(ObjectiveFailure):
    """External trainer exceeded its time budget."""


class ProtocolViolation(ObjectiveFailure):
    """External trainer broke the one-request-one-reply JSON line protocol."""


class NonZeroExit(ObjectiveFailure):
    """External trainer exited with a non-zero status."""


# --- LLM reply parsing ---

class ResponseFormatError(MetaoptError):
    """Reply text violates the single-JSON-object contract."""


class NotJson(ResponseFormatError):
    pass


class MultipleObjects(ResponseFormatError):
    pass


class TrailingContent(ResponseFormatError):
    pass


class DuplicateKey(ResponseFormatError):
    def __init__(self, key: str):
        super().__init__(f"duplicate key: {key!r}")
        self.key = key


# --- LLM gateway ---

class GatewayError(MetaoptError):
    pass


class Unreachable(GatewayError):
    """Endpoint not reachable, or required API key absent from the environment."""


class HttpStatus(GatewayError):
    def __init__(self, status_code: int, body_excerpt: str):
        super().__init__(f"HTTP {status_code}: {body_excerpt}")
        self.status_code = status_code
        self.body_excerpt = body_excerpt


class RequestTimeout(GatewayError):
    pass


class ExhaustedRetries(GatewayError):
    pass


class TranscriptExhausted(GatewayError):
    """Replay consumed more entries than the transcript holds."""


class HashMismatch(GatewayError):
    """Strict replay: the next entry was recorded for a different prompt."""


# --- orchestrator ---

class NonPositiveEpsilon(MetaoptError):
    """The stopping margin must be strictly positive."""


class MissingLatency(MetaoptError):
    """An LLM-origin trial has no recorded completion latency."""


# --- experiment store ---

class UnknownRun(MetaoptError):
    pass


class DuplicateTrialId(MetaoptError):
    """Same trial id appended twice with differing content."""


class EmptyRun(MetaoptError):
    """Run has no successful trial to summarize."""
