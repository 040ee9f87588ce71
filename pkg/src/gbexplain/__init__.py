"""Tree-ensemble alert explanation engine.

Explains gradient-boosted intrusion-detection alerts two ways: provably
valid minimal feature sets (exact interval oracle + deletion filter, with
all-minimal enumeration) and exact Shapley attributions, plus the metrics
to compare them (sparsity, stability, divergence, runtime).
"""

from .attribution import (
    AttributionVector,
    expvalue,
    positive_features,
    shapley_bruteforce,
    shapley_tree,
)
from .kernels import IMPLEMENTATION as KERNEL_IMPLEMENTATION
from .logic import (
    CostVector,
    EnumerationResult,
    Explanation,
    all_minimal,
    is_minimal,
    is_valid,
    one_minimal,
)
from .model import (
    BENIGN,
    MALICIOUS,
    Prediction,
    Sample,
    TreeEnsemble,
    feature_thresholds,
    margin,
    parse_model,
    predict,
    serialize_model,
)
from .oracle import (
    Box,
    FeatureDomainSpec,
    OracleVerdict,
    box_fixing,
    decide_invariance,
    margin_interval,
    reachable_interval,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionVector", "expvalue", "positive_features",
    "shapley_bruteforce", "shapley_tree",
    "CostVector", "EnumerationResult", "Explanation",
    "all_minimal", "is_minimal", "is_valid", "one_minimal",
    "BENIGN", "MALICIOUS", "Prediction", "Sample", "TreeEnsemble",
    "feature_thresholds", "margin", "parse_model", "predict",
    "serialize_model",
    "Box", "FeatureDomainSpec", "OracleVerdict", "box_fixing",
    "decide_invariance", "margin_interval", "reachable_interval",
    "KERNEL_IMPLEMENTATION", "__version__",
]
