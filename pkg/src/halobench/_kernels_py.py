"""Pure-numpy twins of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def _box(values, lo, shape):
    return values[:, lo[0]:lo[0] + shape[0], lo[1]:lo[1] + shape[1], lo[2]:lo[2] + shape[2]]


def pack_range(values, lo, shape, out, start, stop):
    """Write flat elements ``[start, stop)`` of the region into ``out``; zero past its end."""
    if stop > out.shape[0] or start < 0:
        raise ValueError("element range outside buffer")
    box = _box(values, lo, shape)
    logical = box.size
    end = min(stop, logical)
    if start == 0 and end == logical:
        np.copyto(out[:logical].reshape(box.shape), box)
    elif start < end:
        out[start:end] = box[np.unravel_index(np.arange(start, end), box.shape)]
    out[max(start, end):stop] = 0.0


def unpack_range(values, lo, shape, buf, start, stop):
    """Scatter flat elements ``[start, stop)`` of ``buf`` into the region; padding is ignored."""
    box = _box(values, lo, shape)
    logical = box.size
    end = min(stop, logical)
    if end > buf.shape[0] or start < 0:
        raise ValueError("element range outside buffer")
    if start == 0 and end == logical:
        np.copyto(box, buf[:logical].reshape(box.shape))
    elif start < end:
        box[np.unravel_index(np.arange(start, end), box.shape)] = buf[start:end]
