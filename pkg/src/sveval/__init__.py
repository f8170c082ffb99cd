"""Speaker/person detection evaluation toolkit.

Ingests trial keys and LLR score files, computes partition-equalized actual
and minimum detection costs, DET curves with bootstrap confidence intervals,
and provides PLDA/cosine scoring backends plus a seeded synthetic evaluation
generator for testing without licensed data.
"""

__version__ = "0.1.0"

from .trialdata import (
    EmbeddingTable,
    ParseError,
    ScoreSet,
    TrialId,
    TrialKey,
    TrialRecord,
    ValidationReport,
    load_embeddings,
    parse_key,
    parse_scores,
    validate_submission,
    write_embeddings,
    write_key,
    write_scores,
)
from .metrics import (
    DEFAULT_POINTS,
    CostReport,
    EqualizationWeights,
    EvaluationError,
    OperatingPoint,
    PartitionCell,
    PartitionSchema,
    actual_c_primary,
    beta,
    c_norm,
    cost_report,
    equalization_weights,
    error_rates,
    min_c_primary,
    schema_for_track,
)
