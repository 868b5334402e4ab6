"""Learned multi-object collision dynamics with continuous point convolutions."""

from . import autodiff, checkpoint, geometry, nn, pointconv, rollout, sceneio, scenes, trainer, unet
from .autodiff import Tensor, Parameter, FiniteError
from .geometry import PointCloudFrame, TriMesh, Neighborhood, VoxelSchedule
from .unet import ModelConfig, SceneSample, build_unet, predict_next
from .trainer import TrainConfig, train, load_model
from .rollout import kabsch_fit, rollout, evaluate

__version__ = "0.1.0"
