"""Pure-Python/NumPy implementations of the hot per-block kernels.

Mirrors the API of the compiled extension in ``_kernels.pyx``; selected by
``_backend`` when the extension is unavailable or DSFC_PURE_PYTHON=1.
All functions take int64 numpy arrays and return exact integer results
(falling back to Python bigints where an int64 accumulator could overflow).
"""

import numpy as np

BACKEND = "python"

# A sum of |x-y| over a block stays exact in int64 as long as the largest
# summand times the block length fits well under 2^63.
_SAFE_LIMIT = 2**52


def abs_error_sum(x, y):
    """Sum of |x_i - y_i| as an exact Python int."""
    if len(x) == 0:
        return 0
    dx = np.abs(x - y)
    m = int(dx.max())
    if m and m > _SAFE_LIMIT // len(x):
        return sum(abs(int(a) - int(b)) for a, b in zip(x.tolist(), y.tolist()))
    return int(dx.sum())


def clipped_error_sum(x, y, cap):
    """Sum of min(|x_i - y_i|, cap) as an exact Python int."""
    if len(x) == 0:
        return 0
    dx = np.abs(x - y)
    np.minimum(dx, cap, out=dx)
    return int(dx.sum())


def truncate_overflow(x, k):
    """Split a block into (head part, overflow part).

    head[i] = min(x[i], k+1); overflow[i] = 1 if x[i] <= k else x[i].
    """
    head = np.minimum(x, k + 1)
    over = np.where(x <= k, 1, x)
    return head, over


def grid_quantize(head, r, k):
    """Interval quantizer on {1..k+1} with cell width 2r+1.

    Returns (cell indices, per-letter prototypes). Prototypes are the cell
    midpoints clipped into {1..k+1}, which keeps every letter within r of
    its prototype.
    """
    width = 2 * r + 1
    cells = (head - 1) // width
    protos = np.minimum(1 + cells * width + r, k + 1)
    return cells, protos
