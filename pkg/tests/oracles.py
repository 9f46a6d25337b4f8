"""Independent reference implementations used to cross-check the library.

Everything here is written from the definitions with plain numpy (padding
plus shifted slices, explicit window loops) and deliberately avoids the
library's own code paths and scipy.
"""

import numpy as np


def ref_gaussian_kernel(size, sigma):
    r = size // 2
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    dx, dy = np.meshgrid(offsets, offsets)
    w = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
    return w / w.sum()


def ref_blur(a, kernel):
    """Correlation with reflect-101 padding, via shifted slices."""
    size = kernel.shape[0]
    r = size // 2
    h, w = a.shape
    padded = np.pad(a, r, mode="reflect")
    out = np.zeros_like(a)
    for i in range(size):
        for j in range(size):
            out += kernel[i, j] * padded[i : i + h, j : j + w]
    return out


def ref_downsample(a):
    return a[::2, ::2]


def ref_representative(a, i, kernel):
    """i rounds of (4 blurs then decimation)."""
    out = a
    for _ in range(i):
        for _ in range(4):
            out = ref_blur(out, kernel)
        out = ref_downsample(out)
    return out


def ref_scale_loss(a, b, i, kernel):
    fa = ref_representative(a, i, kernel)
    fb = ref_representative(b, i, kernel)
    return float(np.abs(fa - fb).mean())


def ref_scale_loss_rgb(a_u8, b_u8, i, kernel):
    vals = [
        ref_scale_loss(
            a_u8[:, :, c].astype(np.float64), b_u8[:, :, c].astype(np.float64), i, kernel
        )
        for c in range(3)
    ]
    return float(sum(vals) / 3.0)


def ref_luma(rgb_u8):
    c = rgb_u8.astype(np.float64)
    return 0.299 * c[:, :, 0] + 0.587 * c[:, :, 1] + 0.114 * c[:, :, 2]


def ref_mse(a_u8, b_u8):
    d = a_u8.astype(np.float64) - b_u8.astype(np.float64)
    return float((d * d).mean())


def ref_psnr(a_u8, b_u8):
    m = ref_mse(a_u8, b_u8)
    if m == 0.0:
        return float("inf")
    return float(10.0 * np.log10(255.0 * 255.0 / m))


def ref_ssim(a_u8, b_u8, window_size=11, sigma=1.5):
    """Per-window loop over valid centers only, no padding."""
    x = ref_luma(a_u8)
    y = ref_luma(b_u8)
    win = ref_gaussian_kernel(window_size, sigma)
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    h, w = x.shape
    r = window_size // 2
    values = []
    for cy in range(r, h - r):
        for cx in range(r, w - r):
            wx = x[cy - r : cy + r + 1, cx - r : cx + r + 1]
            wy = y[cy - r : cy + r + 1, cx - r : cx + r + 1]
            mu_x = float((win * wx).sum())
            mu_y = float((win * wy).sum())
            var_x = float((win * wx * wx).sum()) - mu_x * mu_x
            var_y = float((win * wy * wy).sum()) - mu_y * mu_y
            cov = float((win * wx * wy).sum()) - mu_x * mu_y
            num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
            den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
            values.append(num / den)
    return float(np.mean(values))


def ref_bilinear(a, sx, sy):
    """Clamped bilinear sampling, scalar loop implementation."""
    h, w = a.shape
    out = np.zeros(sx.shape, dtype=np.float64)
    for idx in np.ndindex(sx.shape):
        x = min(max(float(sx[idx]), 0.0), w - 1.0)
        y = min(max(float(sy[idx]), 0.0), h - 1.0)
        x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
        y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
        x1 = min(x0 + 1, w - 1)
        y1 = min(y0 + 1, h - 1)
        fx = x - x0
        fy = y - y0
        out[idx] = (1 - fy) * ((1 - fx) * a[y0, x0] + fx * a[y0, x1]) + fy * (
            (1 - fx) * a[y1, x0] + fx * a[y1, x1]
        )
    return out


def ref_control_dense(ctrl, width, height):
    """Dense field from a 4x4 control grid by hat-function interpolation."""
    n = ctrl.shape[0]
    out = np.zeros((height, width), dtype=np.float64)
    for y in range(height):
        gy = y * (n - 1) / (height - 1) if height > 1 else 0.0
        for x in range(width):
            gx = x * (n - 1) / (width - 1) if width > 1 else 0.0
            acc = 0.0
            for ci in range(n):
                wy = max(0.0, 1.0 - abs(gy - ci))
                if wy == 0.0:
                    continue
                for cj in range(n):
                    wx = max(0.0, 1.0 - abs(gx - cj))
                    if wx:
                        acc += wy * wx * ctrl[ci, cj]
            out[y, x] = acc
    return out


def apply_known_homography(matrix, points):
    """Map (N, 2) points through a 3x3 matrix, plain arithmetic."""
    out = np.zeros_like(points, dtype=np.float64)
    for idx, (x, y) in enumerate(points):
        d = matrix[2, 0] * x + matrix[2, 1] * y + matrix[2, 2]
        out[idx, 0] = (matrix[0, 0] * x + matrix[0, 1] * y + matrix[0, 2]) / d
        out[idx, 1] = (matrix[1, 0] * x + matrix[1, 1] * y + matrix[1, 2]) / d
    return out
