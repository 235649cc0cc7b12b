"""boxcast: probabilistic 3D bounding-box prediction under ambiguity.

Autoregressive discrete distributions over oriented-box parameters, beam and
quantile-box decoding, an uncertainty measure, dimension-conditioned
prediction, evaluation metrics, and a synthetic ambiguous-scene generator.
"""

from .boxes import (
    PARAM_NAMES,
    BoxCodec,
    BoxParams,
    Normalizer,
    NormalizerMode,
    QuantizedBox,
    Quantizer,
    Quaternion,
    SymmetryMode,
    corners,
    default_ranges,
    dequantize_box,
    enumerate_equivalent_params,
    normalize_cloud,
    quantize_box,
)
from .distributions import (
    Context,
    BoxDistribution,
    ConditionedChain,
    GaussianBaseline,
    OrderedAnalytic,
    TabularChain,
    UnknownContextError,
    condition_on_dims,
    expectation_refine,
    load_model,
    log_prob,
    sample,
    save_model,
)
from .estimator import AutoregressiveBoxEstimator, check_records
from .fitting import (
    FitConfig,
    FitReport,
    TrainingExample,
    build_targets,
    evaluate_nll,
    expected_iou_loss,
    fit_gaussian,
    fit_report,
    fit_tabular,
)
from .geometry import intersection_volume, iog, iou, voxel_iou_oracle
from .inference import (
    BeamConfig,
    QuantileConfig,
    QuantileResult,
    beam_search,
    dimension_conditioned_predict,
    estimate_occupancy,
    quantile_box,
    quantile_boxes,
    sample_points_in_box,
    uncertainty_measure,
)
from .metrics import (
    EvalPair,
    MetricsReport,
    compute_report,
    containment_curve,
    err_center,
    err_dim,
    err_quat,
    f1,
    gaussian_uncertainty,
    uncertainty_quality,
)
from .synthgen import (
    ScenarioKind,
    ScenarioSpec,
    SceneRecord,
    generate,
    latent_distribution,
    read_jsonl,
    write_jsonl,
)

__version__ = "0.1.0"
