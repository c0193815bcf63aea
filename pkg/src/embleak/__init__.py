"""embleak: embedding-table access-pattern leakage analysis and attacks."""

__version__ = "0.1.0"

from .trace import (  # noqa: F401
    AccessEvent,
    AccessTrace,
    CategoricalDistribution,
    PairDistribution,
    ProfileTable,
    TraceSchema,
    empirical_distribution,
    ingest_events,
    ingest_profiles,
    load_trace,
    make_schema,
    pair_distribution,
    split_trace,
    write_events,
    write_profiles,
)
from .synth import (  # noqa: F401
    BehaviorConfig,
    GroupAffinity,
    ProfileConfig,
    ZipfSpec,
    gen_behavior,
    gen_profiles,
    popularity_markov,
    random_markov,
    zipf_distribution,
)
from .hashing import (  # noqa: F401
    HashedTrace,
    ModuloMaskHash,
    PrivateMapHash,
    apply_hash,
    balanced_private_hash,
    modulo_mask_hash,
    random_private_hash,
)
from .infotheory import (  # noqa: F401
    LeakageReport,
    conditional_entropy,
    entropy,
    hash_leakage_report,
    mutual_information,
)
from .freq_attack import (  # noqa: F401
    AccuracyCurve,
    InversionTable,
    ShiftProfileBank,
    analytic_topk,
    build_inversion_table,
    build_shift_bank,
    evaluate_topk,
    recover_mask,
)
from .private_hash import (  # noqa: F401
    AssignmentMatrix,
    FitTrajectory,
    OmpConfig,
    assignment_loss,
    brute_force_oracle,
    evaluate_private_attack,
    greedy_frequency_match,
    omp_fit,
    pair_pushforward,
    refine,
    top1_success,
)
from .anonymity import (  # noqa: F401
    AmbiguityRecord,
    AnonymityReport,
    BucketTable,
    ambiguity_distribution,
    ambiguity_per_item,
    bucketize,
    k_anonymity_report,
    predict_group,
)
from .reident import (  # noqa: F401
    KeyIntervalIndex,
    LinkageReport,
    Query,
    build_key_index,
    derive_queries,
    link_queries,
    threshold_sweep,
    uniqueness_probe,
)
from .errors import EmbleakError, SchemaError, TraceFormatError  # noqa: F401
