"""Fixed-distortion variable-length coding for envelope families of
memoryless integer sources.

The codec truncates each sample at an adaptive threshold, describes the
truncated block with a distortion-respecting partition index, and spells
out the overflow pattern exactly under a coding distribution matched to
the envelope tail. Reference solvers (exact partition search, the
expected-distortion relaxation, the information radius iteration) live in
``dsfc.oracles`` and exist to check the codec, not to run at scale.
"""

from ._backend import BACKEND
from .codec import (
    CodecConfig,
    EncodedStream,
    MeasuredRate,
    decode,
    decode_stream,
    encode,
    measured_rate,
    merge_symbol,
    overflow_symbol,
    roundtrip,
    sqrt_threshold_schedule,
    tail_matched_schedule,
    truncate_symbol,
)
from .codes import (
    BlockPartition,
    CodingDistribution,
    PrefixCode,
    coding_distribution,
    finite_sfe_code,
    first_stage_decode,
    first_stage_encode,
    kraft_sum,
    per_type_code,
    second_stage_code,
    sfe_code,
    tail_block_decode,
    tail_block_encode,
)
from .config import (
    envelope_from_kv,
    envelope_from_string,
    envelope_to_string,
    parse_kv,
    serialize_kv,
)
from .distortion import (
    DistortionSpec,
    RationalDistortionLevel,
    TruncatedDistortion,
    block_distortion,
    consistency_epsilon,
    letter_distortion,
    truncated_distortion,
    truncated_letter_distortion,
    validate_level,
    within_budget,
)
from .errors import (
    BudgetExceeded,
    ConfigInvalid,
    DsfcError,
    EnvelopeViolation,
    KraftViolation,
    LengthMismatch,
    LevelOutOfRange,
    MalformedStream,
    NonConvergence,
    NotSummable,
    TrailingBits,
    WindowTooSmall,
)
from .oracles import (
    BruteForceResult,
    CapacityProblem,
    ConditionRow,
    DisjointFamily,
    FiniteInstance,
    blahut_arimoto_rate_distortion,
    brute_force_operational_rate,
    capacity_problem_from_family,
    disjoint_family_builder,
    envelope_subfamily,
    grid_block_partition,
    projected_info_radius,
    truncated_image_instance,
    truncation_identity_gap,
    universality_conditions_report,
)
from .sources import (
    EnvelopeSpec,
    SourcePmf,
    TailPartitionIndex,
    builtin_envelope,
    entropy,
    envelope_contains,
    envelope_distribution,
    head_mass,
    maxent_threshold,
    projected_divergence,
    projected_entropy,
    sample_block,
    sample_envelope_member,
    tail_start,
    tail_threshold,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
