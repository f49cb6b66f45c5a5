"""Chained representation cycling between images, part segments and 3D body parameters."""

from .body_model import (BodyTemplate, PoseParams, PosedMesh, ShapeParams,
                         build_toy_template, height_normalize, joint_locations,
                         pose_body)
from .camera_render import Camera, DomainBImage, Palette, composite, \
    labels_from_colors, project, rasterize
from .datagen import DatagenConfig, PosePrior, SampleRecord, generate_dataset, \
    load_dataset, save_dataset
from .metrics import MetricReport, best_of_4, iou, mpjpe_root_relative, rmse_family
from .training import TrainConfig, train

__version__ = "0.1.0"
