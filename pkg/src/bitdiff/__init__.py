"""Fully binarized (1-bit weight, 1-bit activation) diffusion models on numpy."""

from .binarize import ActMode, ActScaleParams, BinaryConv2d, act_binarize, binarize_weights, xnor_conv
from .bitkernel import (
    InferenceConvUnit,
    PackedBitTensor,
    bench_conv,
    binary_inference_conv,
    pack_signs,
    xnor_popcount_conv,
)
from .config import RunConfig
from .efficiency import ArchSpec, LayerSpec, conv_bops, model_ops, report
from .spd import DistillConfig, partition_patches, patch_attention, spd_loss, total_loss
from .tbs import TBSParams, TimestepCache, cache_store, tbs_fuse, training_double_pass
from .tensor import Tensor, conv2d, custom_sign, no_grad

__version__ = "0.1.0"
