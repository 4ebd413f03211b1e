"""Multi-view consistent facade generation from shoebox massing models.

Stage 1 turns shoebox renders into detailed multi-view images with a
ControlNet-conditioned multi-view diffusion model; stage 2 estimates depth per
view; stage 3 refines the bundle with depth-aware cross-view attention.
"""

from .camera import CameraPose, CameraRig, look_at_pose, project, rig_poses
from .errors import MVDepthError
from .features import FeatureBackend, FeatureExtractorConfig, extract, gram
from .losses import LossReport, LossWeights, total_loss
from .renderer import DepthMap, Image, ViewBundle, render_bundle, render_view
from .scene import DetailedScene, Footprint, ShoeboxScene, classify_footprint, generate_paired_scene

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "CameraRig",
    "DepthMap",
    "DetailedScene",
    "FeatureBackend",
    "FeatureExtractorConfig",
    "Footprint",
    "Image",
    "LossReport",
    "LossWeights",
    "MVDepthError",
    "ShoeboxScene",
    "ViewBundle",
    "classify_footprint",
    "extract",
    "generate_paired_scene",
    "gram",
    "look_at_pose",
    "project",
    "render_bundle",
    "render_view",
    "rig_poses",
    "total_loss",
]
