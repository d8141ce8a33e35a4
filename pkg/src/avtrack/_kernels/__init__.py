"""Kernel backend selection.

The hot grid kernels exist twice: a Cython compiled core (`_core`) and a
numpy fallback (`reference`). The compiled core is preferred when the
extension was built; AVTRACK_KERNELS=reference|compiled overrides.
Dense matmul is not part of this table -- it goes through numpy/BLAS on
both paths.
"""

import os

from . import reference

_choice = os.environ.get("AVTRACK_KERNELS", "auto")

if _choice == "reference":
    active = reference
elif _choice == "compiled":
    from . import _core as active  # hard failure wanted when forced
elif _choice == "auto":
    try:
        from . import _core as active
    except ImportError:
        active = reference
else:
    raise RuntimeError(f"AVTRACK_KERNELS must be auto|compiled|reference, got {_choice!r}")

backend_name = active.NAME

softmax_rows_fwd = active.softmax_rows_fwd
softmax_rows_bwd = active.softmax_rows_bwd
layer_norm_fwd = active.layer_norm_fwd
layer_norm_bwd = active.layer_norm_bwd
gelu_fwd = active.gelu_fwd
gelu_bwd = active.gelu_bwd
conv3x3_fwd = active.conv3x3_fwd
conv3x3_bwd = active.conv3x3_bwd
im2patches_fwd = active.im2patches_fwd
im2patches_bwd = active.im2patches_bwd
bilinear_crop = active.bilinear_crop
