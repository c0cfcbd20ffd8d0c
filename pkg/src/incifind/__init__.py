"""Lesion-level incidental-finding classification pipeline for radiology reports."""

__version__ = "0.1.0"

from .aggregation import LesionPrediction, aggregate_anatomy, build_report_vector
from .corpus import (
    Anatomy,
    AnatomyVector,
    Assertion,
    ClinicalIndication,
    IndicationType,
    LesionFinding,
    RadiologyReport,
    SizeTrend,
    document_label,
    load_corpus,
    save_corpus,
)
from .ensemble import PredictionSet, ensemble, majority_vote
from .evaluation import (
    BootstrapResult,
    ConfusionMatrix,
    MetricsReport,
    bootstrap_pairwise,
    confusion,
    error_patterns,
    iaa,
    metrics,
)
from .llm_client import (
    LiveTransport,
    OracleTransport,
    RawCompletion,
    ReplayTransport,
    RetryPolicy,
    infer,
    record_cassette,
)
from .parsing import ModelOutput, ParseWarning, extract_json, parse_output, to_lesion_labels
from .prompting import GenerationParams, PromptBundle, PromptSetting, build_prompt
from .sampling import FilterTrace, run_pipeline
from .supervised import (
    CostMatrix,
    CostSensitiveSoftmax,
    HashingFeaturizer,
    SoftmaxModel,
    build_input_string,
    decode,
    featurize,
    loss_expected_cost,
    loss_focal,
    loss_weighted_ce,
)
from .synthgen import GenConfig, generate
from .tagging import TaggedReport, anatomy_map_line, context_window, strip_tags, tag_lesions
