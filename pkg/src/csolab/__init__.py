"""Structured-object scene generation, a numpy U-Net and perturbation probes."""
from .errors import CsoError
from .estimator import UNetSegmenter
from .experiment import ExperimentConfig, RunRecord, run_grid, train_run
from .metrics import MetricsReport, compute_metrics
from .probe import Heatmap, ProbeConfig, make_probe_scene, run_probe
from .scene import CsoConfig, RenderedScene, generate_scenes, render_scene, sample_scene, stack_scenes
from .sprites import SpriteProvider
from .unet import UNetArch, UNetModel, build_unet, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CsoConfig", "CsoError", "ExperimentConfig", "Heatmap", "MetricsReport", "ProbeConfig",
    "RenderedScene", "RunRecord", "SpriteProvider", "UNetArch", "UNetModel", "UNetSegmenter",
    "build_unet", "compute_metrics", "generate_scenes", "load_checkpoint", "make_probe_scene", "stack_scenes",
    "render_scene", "run_grid", "run_probe", "sample_scene", "save_checkpoint", "train_run",
]
