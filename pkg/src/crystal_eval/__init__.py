"""Step-level multimodal-reasoning evaluation toolkit."""

from .answers import AnswerKind, AnswerVerdict, classify, macro_accuracy, score_answer
from .core import (
    EvalRecord,
    Example,
    Prediction,
    load_dataset,
    load_predictions,
    parse_example,
    parse_prediction,
    serialize_example,
)
from .embeddings import EmbeddingGateway, EmbeddingVector, ProviderDescriptor, cosine
from .metrics import (
    AggregateReport,
    MatchSet,
    OrderParams,
    aggregate,
    cohen_kappa,
    example_f1,
    greedy_match,
    kendall_tau_normalized,
    lis_ratio,
    ordered_f1,
    precision_recall,
)
from .rewards import (
    CurriculumSchedule,
    RewardConfig,
    RewardOutcome,
    composite_reward,
    cpr_reward,
    diagnostics,
    schedule,
)

__version__ = "0.1.0"
