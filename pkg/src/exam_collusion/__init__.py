"""Collusion screening for unproctored exams from submission event logs."""

from ._validation import InputError, InvariantError
from .clustering import (
    Dendrogram,
    HierarchicalClustering,
    agglomerate,
    cophenetic_correlation,
    cophenetic_matrix,
    lowest_clusters,
    select_linkage,
)
from .dissimilarity import (
    AttributeScheme,
    DissimilarityMatrix,
    ExamDissimilarity,
    bin_events,
    build_scheme,
    event_dissimilarity,
    global_dissimilarity,
    normalize_attributes,
    point_dissimilarity,
)
from .flagging import CollusionFlagger, DistributionSummary, FlagReport, flag_pairs, standardize, summarize
from .ingest import (
    CohortFilter,
    StudentExam,
    SubmissionEvent,
    SubtaskCatalog,
    assemble_cohort,
    load_catalog,
    load_cohort,
    parse_events,
    parse_scores,
)

__version__ = "0.1.0"
