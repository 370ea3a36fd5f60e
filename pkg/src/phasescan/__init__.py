"""Automatic detection of phase transitions in autoregressive generative models.

Scan a control parameter (a number in the prompt, the sampling temperature,
or a training checkpoint), estimate how dissimilar the model's output
distributions are on either side of each candidate point, and report the
local maxima of the resulting curve as transitions.
"""

from .divergence import (
    BUILTIN_G,
    FiniteDistribution,
    GKind,
    GSpec,
    SegmentPosterior,
    exact_g_dissimilarity,
    f_divergence,
    f_from_g,
    flattening_shift,
    g_shift,
    js_divergence,
    tv_distance,
)
from .models import (
    AutoregressiveModel,
    AxisKind,
    AxisPoint,
    ModelEndpoint,
    ModelError,
    RemoteModel,
    TabularModel,
    TokenSequence,
    softmax_temperature,
)
from .scan import (
    DissimilarityCurve,
    ParameterGrid,
    Peak,
    PeakReport,
    SampleStore,
    build_grid,
    detect_peaks,
    exact_curve,
    exact_estimate,
    flanking_dissimilarity,
    run_scan,
    segment_posterior,
    stage1_generate,
    stage2_estimate,
)
from .thermo import ThermalCurve, energy, heat_capacity, mean_energy_curve
from .weights import (
    CheckpointSeries,
    WeightHistogram,
    histogram_weights,
    series_dissimilarity,
)

__version__ = "0.1.0"
