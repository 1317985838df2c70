"""Independent reference implementations used to check the library.

Everything here is written the slow, obvious way (nested loops, central
differences) and must stay independent of the code under test.
"""

import numpy as np

from advseg.tensor import Tape, Tensor, backward


def conv2d_loop(x, kernel, bias, stride=1, padding=0):
    """Six-nested-loop cross-correlation reference."""
    B, Cin, H, W = x.shape
    Cout, _, k, _ = kernel.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((B, Cout, Ho, Wo), dtype=np.float64)
    for b in range(B):
        for co in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for ci in range(Cin):
                        for u in range(k):
                            for v in range(k):
                                acc += (
                                    xp[b, ci, i * stride + u, j * stride + v]
                                    * kernel[co, ci, u, v]
                                )
                    out[b, co, i, j] = acc + (bias[co] if bias is not None else 0.0)
    return out


def maxpool_loop(x, window):
    """Loop reference returning (pooled, gradient routing for upstream ones).

    Routing sends each window's gradient to its first maximum in row-major
    order, matching the documented tie rule.
    """
    B, C, H, W = x.shape
    Ho, Wo = H // window, W // window
    out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
    route = np.zeros_like(x, dtype=np.float64)
    for b in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    best = -np.inf
                    best_pos = (0, 0)
                    for u in range(window):
                        for v in range(window):
                            val = x[b, c, i * window + u, j * window + v]
                            if val > best:
                                best = val
                                best_pos = (u, v)
                    out[b, c, i, j] = best
                    route[b, c, i * window + best_pos[0], j * window + best_pos[1]] += 1.0
    return out, route


def iou_loop(pred, truth):
    """Double-loop pixel-count IoU with the both-empty-equals-one rule."""
    inter = 0
    union = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p, t = int(pred[i, j]), int(truth[i, j])
            if p == 1 and t == 1:
                inter += 1
            if p == 1 or t == 1:
                union += 1
    if union == 0:
        return 1.0
    return inter / union


def finite_difference_grad(make_loss, tensor, step=1e-3, indices=None):
    """Central finite differences of a scalar loss wrt one tensor.

    `make_loss()` must recompute the loss from the tensor's current data.
    `indices` restricts the check to a flat-index subset (for big tensors).
    Evaluate in float64 for the step size to be meaningful.
    """
    flat = tensor.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    grad = np.zeros(len(list(indices)), dtype=np.float64)
    indices = list(indices)
    for pos, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + step
        hi = make_loss()
        flat[i] = orig - step
        lo = make_loss()
        flat[i] = orig
        grad[pos] = (hi - lo) / (2.0 * step)
    return grad


def autodiff_grad(make_loss_tensor, tensors):
    """Gradients of make_loss_tensor() wrt each tensor, via the tape."""
    with Tape():
        loss = make_loss_tensor()
    grads = backward(loss, tensors)
    return [grads[t] for t in tensors]


def relative_error(analytic, numeric, floor=1e-6):
    """Worst relative error where the analytic gradient is significant."""
    analytic = np.asarray(analytic).reshape(-1)
    numeric = np.asarray(numeric).reshape(-1)
    mask = np.abs(analytic) > floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(analytic[mask] - numeric[mask]) / np.abs(analytic[mask])))
