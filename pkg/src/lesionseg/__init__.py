"""Parallel CNN + transformer skin-lesion segmentation, built from scratch.

The package has three layers: a float64 autodiff tensor core
(:mod:`lesionseg.tensor`), the dual-branch segmentation model built on it
(:mod:`lesionseg.cnn`, :mod:`lesionseg.transformer`, :mod:`lesionseg.fusion`,
:mod:`lesionseg.model`), and the surrounding loss/metric/data/training
machinery.
"""

from .tensor import Tensor, backward, grad_check
from .model import ModelConfig, SegNet, build_model, paper_shape_config, toy_config
from .fusion import FusionMode
from .data import SegSample, load_isic_dir, load_sample, synth_dataset
from .metrics import ConfusionMatrix, confusion, metric_suite
from .train import TrainConfig, evaluate, infer, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "grad_check",
    "ModelConfig", "SegNet", "build_model", "toy_config",
    "paper_shape_config", "FusionMode",
    "SegSample", "load_sample", "load_isic_dir", "synth_dataset",
    "ConfusionMatrix", "confusion", "metric_suite",
    "TrainConfig", "train", "evaluate", "infer",
    "__version__",
]
