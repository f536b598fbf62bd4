"""Visual prompting: reference sets, similarity maps, prompt sampling, pseudolabels."""

from vplab.matcher.pipeline import (
    MatchParams,
    PseudoLabel,
    advance_status,
    generate_pseudolabels,
    pseudolabel_one,
)
from vplab.matcher.reference import COVERAGE_THRESHOLD, ReferenceSet, build_reference, mask_cell_coverage
from vplab.matcher.similarity import SimilarityMap, sample_points, similarity_map

__all__ = [
    "COVERAGE_THRESHOLD",
    "MatchParams",
    "PseudoLabel",
    "ReferenceSet",
    "SimilarityMap",
    "advance_status",
    "build_reference",
    "generate_pseudolabels",
    "mask_cell_coverage",
    "pseudolabel_one",
    "sample_points",
    "similarity_map",
]
