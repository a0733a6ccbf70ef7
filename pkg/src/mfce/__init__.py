"""Multi-frame cross-entropy training for fully convolutional acoustic models."""
from .convgeom import LayerSpec, ModelSpec, intrinsic_length, output_count, utterance_padding
from .tensor import Tensor, backward

__all__ = ["LayerSpec", "ModelSpec", "Tensor", "backward", "intrinsic_length",
           "output_count", "utterance_padding"]
__version__ = "0.1.0"
