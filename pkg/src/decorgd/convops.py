"""Patch extraction and pooling for image batches laid out as ``(B, C, H, W)``."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class GeometryError(ValueError):
    pass


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _check_geometry(H, W, kernel, stride, padding):
    if stride < 1 or kernel < 1 or padding < 0:
        raise GeometryError(f"invalid kernel={kernel} stride={stride} padding={padding}")
    oh = conv_output_size(H, kernel, stride, padding)
    ow = conv_output_size(W, kernel, stride, padding)
    if H + 2 * padding < kernel or W + 2 * padding < kernel:
        raise GeometryError(
            f"kernel {kernel} does not fit input {H}x{W} with padding {padding} "
            f"(output size would be {oh}x{ow})")
    return oh, ow


def im2col(X: np.ndarray, kernel: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Unfold ``(B, C, H, W)`` images into a ``(C*k*k, B*OH*OW)`` patch matrix.

    Rows follow ``(channel, kernel row, kernel col)``; columns run over output
    positions in row-major order within a sample, samples outermost.  A conv
    weight of shape ``(out, C*k*k)`` then convolves with a single matmul.
    """
    B, C, H, W = X.shape
    oh, ow = _check_geometry(H, W, kernel, stride, padding)
    if padding:
        X = np.pad(X, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(X, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :oh, :ow]
    # (B, C, oh, ow, k, k) -> (C, k, k, B, oh, ow)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(C * kernel * kernel,
                                                                      B * oh * ow)


def col2im(cols: np.ndarray, input_shape, kernel: int, stride: int = 1,
           padding: int = 0) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch columns back into images."""
    B, C, H, W = input_shape
    oh, ow = _check_geometry(H, W, kernel, stride, padding)
    c6 = cols.reshape(C, kernel, kernel, B, oh, ow).transpose(3, 0, 1, 2, 4, 5)
    out = np.zeros((B, C, H + 2 * padding, W + 2 * padding))
    for i in range(kernel):
        for j in range(kernel):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += c6[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def cols_to_image(cols: np.ndarray, B: int, oh: int, ow: int) -> np.ndarray:
    """``(channels, B*oh*ow)`` conv output -> ``(B, channels, oh, ow)``."""
    return cols.reshape(cols.shape[0], B, oh, ow).transpose(1, 0, 2, 3)


def image_to_cols(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`cols_to_image`."""
    return img.transpose(1, 0, 2, 3).reshape(img.shape[1], -1)


def maxpool_forward(X: np.ndarray, window: int = 2, stride: int = 2):
    """Window maximum over ``(B, C, H, W)``.

    Returns the pooled batch and, per output cell, the flat ``h*W + w`` index
    of the winning input pixel.  Ties go to the lowest flat index.
    """
    B, C, H, W = X.shape
    oh, ow = _check_geometry(H, W, window, stride, 0)
    win = sliding_window_view(X, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :oh, :ow].reshape(B, C, oh, ow, window * window)
    local = np.argmax(win, axis=-1)
    pooled = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + local // window
    cols = np.arange(ow)[None, :] * stride + local % window
    return pooled, rows * W + cols


def maxpool_backward(d_out: np.ndarray, indices: np.ndarray, input_shape) -> np.ndarray:
    """Route pooled gradients to their argmax positions; all others get 0."""
    B, C, H, W = input_shape
    grad = np.zeros((B * C, H * W))
    flat_idx = indices.reshape(B * C, -1)
    np.add.at(grad, (np.arange(B * C)[:, None], flat_idx), d_out.reshape(B * C, -1))
    return grad.reshape(B, C, H, W)
