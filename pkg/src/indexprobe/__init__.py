"""Composite index construction with sensitivity and validity diagnostics."""

from .errors import (
    ConfigError,
    DegenerateRanking,
    DomainError,
    DuplicateUnit,
    IndexProbeError,
    InsufficientData,
    MethodError,
    MissingParent,
    ParseError,
    RecordError,
    ScaleError,
    SchemaError,
    SpecError,
    UnitSetError,
    UnresolvableSource,
)
from .frame import (
    Crosswalk,
    FrameSchema,
    Link,
    SpatialFrame,
    SpatialUnit,
    broadcast_parent,
    build_frame,
    combine_attributes,
    filter_populated,
    load_crosswalk,
    load_frame,
    reaggregate,
    resolve_highest_overlap,
)
from .index import (
    IndexSpec,
    IndexTerm,
    RankedIndex,
    RiskInputs,
    evaluate_hierarchical,
    evaluate_risk_formula,
    evaluate_spec,
    percentile_rank,
    quintile_score,
    rank_index,
    register_transform,
    zscore,
)
from .sensitivity import (
    StabilitySummary,
    TransitionRecord,
    VariantRun,
    classify_transitions,
    run_variants,
    scale_sensitivity,
    stability_summary,
)
from .validity import (
    PairedRanking,
    Ranking,
    ValidityReport,
    alignment,
    correlation_matrix,
    impact_validity,
    kendall_counts,
    kendall_tau,
    pair,
    spearman,
    specification_report,
)

__version__ = "0.1.0"
