"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``HALOBENCH_PURE_PYTHON`` is set to a non-empty value, the numpy fallback is used.
"""

import logging
import os

logger = logging.getLogger(__name__)

if os.environ.get("HALOBENCH_PURE_PYTHON"):
    from ._kernels_py import pack_range, unpack_range
    BACKEND = "python"
else:
    try:
        from ._kernels import pack_range, unpack_range
        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._kernels_py import pack_range, unpack_range
        BACKEND = "python"
        logger.info("compiled kernels unavailable; using numpy fallback")

__all__ = ["BACKEND", "pack_range", "unpack_range"]
