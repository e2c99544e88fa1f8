"""Dense sliding-window instance masks as structured 4D tensors."""

from .core import FeatureMap, Repr, StructuredTensor, Units, index, vu_to_image_offset
from .transforms import (
    Interp,
    align2nat,
    align2nat_general,
    instancefcn_decode,
    nat2align,
    subsample_hw,
    swap_align2nat,
    up_align2nat,
    up_bilinear_vu,
)

__version__ = "0.1.0"

__all__ = [
    "FeatureMap", "Repr", "StructuredTensor", "Units", "index", "vu_to_image_offset",
    "Interp", "align2nat", "align2nat_general", "instancefcn_decode", "nat2align",
    "subsample_hw", "swap_align2nat", "up_align2nat", "up_bilinear_vu",
]
