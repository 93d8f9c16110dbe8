"""Unified radio-optical field on 3D Gaussian primitives."""
from .core import (CameraView, GaussianPrimitive, Gaussians, InvalidParameterError, NumericDegenerateError,
                   build_covariance, eval_gaussian, look_at, project)
from .raster import GBuffer, oracle_composite, rasterize
from .priors import (AlignedDepthMap, AlignmentError, SparseDepthMap, align_depth, align_normal_frame,
                     pseudo_normals_from_depth)
from .losses import LossReport, depth_loss, normal_loss, photometric_loss, spectrum_loss
from .train import FitResult, TrainConfig, TrainingDivergedError, fit
from .planner import PlanningGrid, PlanResult, improvement_rate, plan_path, rank_aps, shortest_path

__version__ = "0.1.0"
