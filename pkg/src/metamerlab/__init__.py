"""Foveated texture-statistic stimulus synthesis and psychophysics tooling."""

from .image import ImageBuffer, load_png, save_png, to_grayscale
from .pyramids import (GaussianPyramid, SteerablePyramid, gaussian_pyramid,
                       steerable_decompose, steerable_reconstruct)
from .stats import (StatConfig, StatVector, compute_stats, stat_distance,
                    stat_gradient)
from .pooling import PoolingConfig, PoolingRegion, build_regions, eccentricity_of
from .synthesis import (SynthesisConfig, SynthesisResult, detect_duplicates,
                        invert_features, synthesize_texform)
from .extractors import (ConvFeatureExtractor, GlobalStatExtractor,
                         IdentityExtractor, PooledStatExtractor)
from .stimuli import StimulusSet, ingest_stimulus_set
from .iqa import MseMetric, TextureTolerantMetric, mse, optimize_texform_params, pyramid_iqa
from .experiment import (Condition, DisplayGeometry, ExperimentConfig,
                         SimulatedObserver, TrialRecord, TrialSpec, deg_to_px,
                         degrees_per_screen, generate_trials, score_session)
from .analysis import (PsychometricCurve, SigmoidFit, bootstrap_ci, build_curve,
                       compare_curves, critical_eccentricity, fit_sigmoid)

__version__ = "0.1.0"
