"""Dense float32 array type and the bulk operations layers are built from.

Tensors are plain C-contiguous numpy arrays, channel-major ``[c, h, w]`` for
images.  The engine stores everything in 32-bit floats; the helpers below do
not hard-cast their inputs, so the 64-bit gradient-oracle path can reuse the
exact same code.
"""

import numpy as np

from .errors import RangeError, ShapeError

DTYPE = np.float32

# alias used in annotations throughout the package
Tensor = np.ndarray


def new_filled(shape, value):
    """Allocate a row-major float32 tensor with every element set to value."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"extents must be positive, got {list(shape)}")
    return np.full(shape, value, dtype=DTYPE)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors, [m,k] x [k,n] -> [m,n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def argmax_last(t: Tensor) -> np.ndarray:
    """Index of the maximum along the last axis; ties go to the lowest index."""
    if t.ndim < 1 or t.shape[-1] < 1:
        raise ShapeError("argmax_last needs a nonempty last axis")
    return np.argmax(t, axis=-1)


def hflip(t: Tensor) -> Tensor:
    """Mirror a [c,h,w] image along the vertical axis: (c,y,x) -> (c,y,w-1-x)."""
    if t.ndim != 3:
        raise ShapeError(f"hflip needs a rank-3 [c,h,w] tensor, got rank {t.ndim}")
    return np.ascontiguousarray(t[:, :, ::-1])


def crop(t: Tensor, top: int, left: int, ch: int, cw: int) -> Tensor:
    """Contiguous copy of the [c, ch, cw] window at (top, left)."""
    if t.ndim != 3:
        raise ShapeError(f"crop needs a rank-3 [c,h,w] tensor, got rank {t.ndim}")
    _, h, w = t.shape
    if top < 0 or left < 0 or top + ch > h or left + cw > w or ch < 1 or cw < 1:
        raise RangeError(
            f"crop window (top={top}, left={left}, {ch}x{cw}) outside image {h}x{w}"
        )
    return np.ascontiguousarray(t[:, top : top + ch, left : left + cw])
