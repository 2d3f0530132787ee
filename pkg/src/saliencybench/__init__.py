"""Model-agnostic perturbation saliency maps and their computational evaluation.

Four explainers (occlusion sensitivity, noise sensitivity, RISE, LIME) that
only ever see a model's inputs and outputs, plus the three evaluation tools
used to compare them: parameter-randomization sanity checks, the insertion
metric with AUC, and runtime statistics.  Ships a small layered-network
engine and analytic oracle models so everything runs end to end without
external assets.
"""

from .core import (
    FormatError,
    Image,
    RngStream,
    SaliencyMap,
    bilinear_upsample,
    normalize_map,
    read_map,
    read_tensor,
    write_map,
    write_tensor,
)
from .evaluate import (
    InsertionCurve,
    SanityReport,
    SanityRow,
    TimingStats,
    auc,
    hog_pearson,
    insertion_curve,
    sanity_check,
    spearman,
    ssim,
    time_explainer,
)
from .explain import (
    DummyConfig,
    ExplainResult,
    LimeConfig,
    LimeExplanation,
    NoiseConfig,
    OcclusionConfig,
    RiseConfig,
    explain_image,
    input_intensity_saliency,
    lime,
    lime_binarize,
    noise_sensitivity,
    occlusion_sensitivity,
    read_lime_explanation,
    rise,
    write_lime_explanation,
)
from .frames import generate_frames
from .models import (
    ConfidenceOutput,
    ConstantModel,
    Conv2D,
    Dense,
    Flatten,
    LayeredModel,
    ReLU,
    Softmax,
    build_constant_model,
    build_dqn_toy,
    build_planted_model,
    forward,
    randomize_layers,
    read_model,
    write_model,
)
from .perturb import (
    Mask,
    QuickshiftParams,
    Segmentation,
    blur_circle,
    delete_superpixels,
    generate_rise_masks,
    occlude_circle,
    occlude_patch,
    quickshift_segment,
)

__version__ = "0.1.0"
