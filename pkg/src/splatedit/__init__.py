"""Localized editing of 3D Gaussian splat scenes.

Three stages: locate edit regions in 3D from 2D noise-prediction
differences, initialize new Gaussians from calibrated monocular depth, and
refine through scheduled conditional view edits. All learned 2D priors sit
behind small oracle protocols with deterministic mocks, so the geometric and
numerical core runs and tests entirely offline.
"""

__version__ = "0.1.0"

from .depth_init import (
    Calibration, DepthImage, DisparityMap, build_delta_gaussians,
    calibrate_disparity, disparity_from_render, disparity_to_depth, unproject,
)
from .localize import (
    LocalizationConfig, Mask2D, Mask3D, inverse_render_masks, locate_2d,
    relevance_from_noise, select_frontal, smooth_and_threshold,
)
from .oracles import (
    MockDepth, MockEditor, MockNoisePredictor, MockPerceptual, NoiseSchedule,
    OracleSuite, add_noise, default_mock_suite,
)
from .refine import (
    CycleSpec, EditedViewSet, EditSchedule, LossConfig, OptimizerConfig,
    PipelineConfig, finetune, refine_view, run_pipeline, select_adjacent,
)
from .render import (
    RenderOutput, SplattedGaussian, backward, project, render,
    render_gaussian_mask,
)
from .scene import (
    Camera, Gaussian, GaussianCloud, covariance, load_camera_manifest,
    load_ply, merge, save_camera_manifest, save_ply,
)

__all__ = [name for name in dir() if not name.startswith("_")]
