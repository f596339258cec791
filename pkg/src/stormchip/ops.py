"""Dense numeric kernels every other module builds on.

Image data is laid out batch x channels x height x width in row-major
(C) order throughout the package.  Kernels are pure functions of their
inputs with a fixed reduction order, so repeated calls on the same data
are bitwise reproducible.  The default precision is 32-bit; every kernel
also accepts 64-bit arrays, which is what the gradient-checking code
uses.
"""

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """An operand shape violates a kernel's contract."""


def tensor_new(shape, fill=0.0, dtype=DEFAULT_DTYPE):
    """Allocate a tensor of the given shape with every element == fill."""
    shape = tuple(shape)
    if not shape:
        raise ShapeError("shape needs at least one extent")
    for extent in shape:
        if int(extent) != extent or extent < 1:
            raise ShapeError(f"extents must be positive integers, got {shape}")
    return np.full(tuple(int(e) for e in shape), fill, dtype=dtype)


def matmul(a, b):
    """Matrix product of two rank-2 arrays with explicit shape checks."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def im2col(image, kernel=3, stride=1):
    """Unfold the 3x3 receptive fields of a C x H x W image into columns.

    Column j holds the receptive field of output pixel j, where output
    pixels are numbered row-major over the (H-2) x (W-2) grid of a valid
    (unpadded) convolution.  Within a column the 9*C entries are ordered
    channel-major, then kernel row, then kernel column.  A leading
    batch axis of extent 1 is accepted and squeezed.
    """
    if kernel != 3 or stride != 1:
        raise ShapeError("only 3x3 stride-1 unfolding is supported")
    image = np.asarray(image)
    if image.ndim == 4:
        if image.shape[0] != 1:
            raise ShapeError(f"im2col takes a single image, got batch {image.shape[0]}")
        image = image[0]
    if image.ndim != 3:
        raise ShapeError(f"expected C x H x W input, got shape {image.shape}")
    c, h, w = image.shape
    if h < 3 or w < 3:
        raise ShapeError(f"input {h}x{w} is smaller than the 3x3 kernel")
    windows = np.lib.stride_tricks.sliding_window_view(image, (3, 3), axis=(1, 2))
    # (C, H-2, W-2, 3, 3) -> (C, 3, 3, H-2, W-2) -> (9C, (H-2)(W-2))
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c * 9, (h - 2) * (w - 2))
    return np.ascontiguousarray(cols)


def im2col_batch(x):
    """Batched im2col: N x C x H x W -> N x 9C x (H-2)(W-2)."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected N x C x H x W input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h < 3 or w < 3:
        raise ShapeError(f"input {h}x{w} is smaller than the 3x3 kernel")
    windows = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(2, 3))
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * 9, (h - 2) * (w - 2))
    return np.ascontiguousarray(cols)


def col2im_batch_accumulate(cols, channels, height, width):
    """Scatter-add 3x3 columns back onto an N x C x H x W grid.

    Adjoint of im2col_batch; used to route convolution gradients back to
    the layer input.  Overlapping receptive fields accumulate.
    """
    cols = np.asarray(cols)
    n = cols.shape[0]
    oh, ow = height - 2, width - 2
    if cols.shape[1] != channels * 9 or cols.shape[2] != oh * ow:
        raise ShapeError(f"column block {cols.shape} does not fold onto {channels}x{height}x{width}")
    out = np.zeros((n, channels, height, width), dtype=cols.dtype)
    view = cols.reshape(n, channels, 3, 3, oh, ow)
    for ki in range(3):
        for kj in range(3):
            out[:, :, ki:ki + oh, kj:kj + ow] += view[:, :, ki, kj]
    return out


def conv2d_naive(image, weights, bias):
    """Valid 3x3 stride-1 convolution by direct nested loops.

    Slow reference used to cross-check the im2col + matmul path; do not
    call it on real workloads.  image is C x H x W, weights F x C x 3 x 3,
    bias F.
    """
    image = np.asarray(image)
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    c, h, w = image.shape
    f = weights.shape[0]
    if weights.shape != (f, c, 3, 3):
        raise ShapeError(f"weights {weights.shape} do not match {c}-channel input")
    if h < 3 or w < 3:
        raise ShapeError(f"input {h}x{w} is smaller than the 3x3 kernel")
    out = np.zeros((f, h - 2, w - 2), dtype=image.dtype)
    for fi in range(f):
        for i in range(h - 2):
            for j in range(w - 2):
                acc = bias[fi]
                for ci in range(c):
                    for ki in range(3):
                        for kj in range(3):
                            acc += weights[fi, ci, ki, kj] * image[ci, i + ki, j + kj]
                out[fi, i, j] = acc
    return out


def resize_bilinear(image, out_h, out_w):
    """Resize a C x H x W image with corner-aligned bilinear sampling.

    Target == source shape is an exact passthrough; constant images stay
    constant at any size.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"expected C x H x W input, got shape {image.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError("output extents must be >= 1")
    c, h, w = image.shape
    if (out_h, out_w) == (h, w):
        return image.copy()
    src_r = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    src_c = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    r0 = np.floor(src_r).astype(np.intp)
    c0 = np.floor(src_c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (src_r - r0).astype(image.dtype)[:, None]
    fc = (src_c - c0).astype(image.dtype)[None, :]
    top = image[:, r0[:, None], c0[None, :]] * (1 - fc) + image[:, r0[:, None], c1[None, :]] * fc
    bot = image[:, r1[:, None], c0[None, :]] * (1 - fc) + image[:, r1[:, None], c1[None, :]] * fc
    return (top * (1 - fr) + bot * fr).astype(image.dtype, copy=False)
