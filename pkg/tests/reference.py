"""
Brute-force oracles written directly from the defining formulas: nested-loop
convolution and resizing, straight-line versions of the prompt enhancement and
SCM stages, and loop-based segmentation metrics.
"""

import math

import numpy as np
from scipy.ndimage import distance_transform_edt

EPS = np.spacing(1)


# ---------------------------------------------------------------------------
# Spatial primitives
# ---------------------------------------------------------------------------


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    batch, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((batch, c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((batch, c_out, h_out, w_out))
    for n in range(batch):
        for o in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc = 0.0
                    for c in range(c_in):
                        for u in range(k):
                            for v in range(k):
                                acc += w[o, c, u, v] * xp[n, c, i * stride + u, j * stride + v]
                    out[n, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def _source(i, n_out, n_in):
    src = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
    lo = min(int(math.floor(src)), n_in - 1)
    hi = min(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_loops(x, height, width):
    """Half-pixel bilinear resize, edge-clamped"""
    batch, channels, h, w = x.shape
    if (h, w) == (height, width):
        return x.copy()
    out = np.zeros((batch, channels, height, width))
    for i in range(height):
        y0, y1, fy = _source(i, height, h)
        for j in range(width):
            x0, x1, fx = _source(j, width, w)
            out[:, :, i, j] = (
                (1 - fy) * (1 - fx) * x[:, :, y0, x0]
                + (1 - fy) * fx * x[:, :, y0, x1]
                + fy * (1 - fx) * x[:, :, y1, x0]
                + fy * fx * x[:, :, y1, x1]
            )
    return out


def _conv3(block, x, activation="relu"):
    """3x3 conv, per-channel gain/shift, activation"""
    y = conv2d_loops(x, block.weight.values, block.bias.values, padding=1)
    y = y * block.gain.values[None, :, None, None] + block.shift.values[None, :, None, None]
    if activation == "relu":
        return np.maximum(y, 0.0)
    return y


def _conv1x1(x, conv):
    w, b = conv
    return np.einsum("ok,bkhw->bohw", w.values[:, :, 0, 0], x) + b.values[None, :, None, None]


def _conv3x3(x, conv):
    w, b = conv
    return conv2d_loops(x, w.values, b.values, padding=1)


# ---------------------------------------------------------------------------
# Model stages
# ---------------------------------------------------------------------------


def mvcm_enhance_oracle(f_n, params, activation="relu"):
    """F_n^1 = C(C(F_n) + F_n); F_n^k = C(C(F_n * F_n^{k-1}) + F_n * F_n^{k-1}); F_v = C([F_n^1, F_n^2, F_n^3])"""
    inner1, outer1 = params.step1
    inner2, outer2 = params.step2
    inner3, outer3 = params.step3
    f_n1 = _conv3(outer1, _conv3(inner1, f_n, activation) + f_n, activation)
    x2 = f_n * f_n1
    f_n2 = _conv3(outer2, _conv3(inner2, x2, activation) + x2, activation)
    x3 = f_n * f_n2
    f_n3 = _conv3(outer3, _conv3(inner3, x3, activation) + x3, activation)
    f_v = _conv3(params.fuse, np.concatenate([f_n1, f_n2, f_n3], axis=1), activation)
    return f_n1, f_n2, f_n3, f_v


def scm_spatial_oracle(x_i, x_ip1, g_c, params):
    h, w = x_i.shape[2:]
    x_next = _conv1x1(resize_loops(x_ip1, h, w), params.proj_next)
    guidance = _conv1x1(resize_loops(g_c, h, w), params.proj_guide)
    a = _conv3x3(x_i + x_next, params.localize) * guidance

    r_cls = np.zeros_like(a)
    for n in range(a.shape[0]):
        for c in range(a.shape[1]):
            plane = a[n, c]
            e = np.exp(plane - plane.max())
            r_cls[n, c] = e / e.sum()

    x_hat_i = r_cls * x_i
    x_hat_ip1 = r_cls * x_next
    stacked = np.concatenate([x_hat_ip1, x_hat_i], axis=1)
    fc_w, fc_b = params.fc
    g_prime = np.einsum("ok,bkhw->bohw", fc_w.values, stacked) + fc_b.values[None, :, None, None]
    return {"r_cls": r_cls, "x_tilde_i": g_prime + x_hat_i, "x_tilde_ip1": g_prime + x_hat_ip1}


def scm_channel_oracle(x_tilde_i, x_tilde_ip1, params):
    x_cot = _conv3x3(np.concatenate([x_tilde_i, x_tilde_ip1], axis=1), params.cot)
    cg = x_cot.shape[1] // len(params.group_convs)
    gated = []
    for j, ((fc1, fc2), conv) in enumerate(zip(params.gates, params.group_convs)):
        group = x_cot[:, j * cg : (j + 1) * cg]
        pooled = group.mean(axis=(2, 3))
        hidden = pooled @ fc1[0].values.T + fc1[1].values
        weight = 1.0 / (1.0 + np.exp(-(hidden @ fc2[0].values.T + fc2[1].values)))
        gated.append(_conv3x3(group * weight[:, :, None, None], conv))
    return _conv3x3(np.concatenate(gated, axis=1), params.out)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def bce_oracle(logits, gt):
    p = 1.0 / (1.0 + np.exp(-logits))
    return float(np.mean(-(gt * np.log(p) + (1 - gt) * np.log(1 - p))))


def iou_oracle(logits, gt):
    p = 1.0 / (1.0 + np.exp(-logits))
    scores = []
    for b in range(logits.shape[0]):
        inter = float(np.sum(p[b] * gt[b]))
        union = float(np.sum(p[b]) + np.sum(gt[b]) - inter)
        scores.append(1.0 - (inter + 1.0) / (union + 1.0))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def ref_mae(pred, gt):
    h, w = gt.shape
    return sum(abs(pred[i, j] - float(gt[i, j])) for i in range(h) for j in range(w)) / (h * w)


def _ref_s_object(values):
    n = len(values)
    if n == 0:
        return 0.0
    mean = sum(values) / n
    sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
    return 2 * mean / (mean * mean + 1 + sd + EPS)


def _ref_ssim(pred, gt):
    n = pred.size
    px = [float(v) for v in pred.ravel()]
    gy = [float(v) for v in gt.ravel()]
    x = sum(px) / n
    y = sum(gy) / n
    d = max(n - 1, 1)
    sx = sum((a - x) ** 2 for a in px) / d
    sy = sum((b - y) ** 2 for b in gy) / d
    sxy = sum((a - x) * (b - y) for a, b in zip(px, gy)) / d
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def ref_s_measure(pred, gt):
    gt = gt.astype(bool)
    h, w = gt.shape
    u = gt.sum() / gt.size
    if u == 0:
        return max(0.0, 1 - pred.mean())
    if u == 1:
        return max(0.0, pred.mean())

    fg = [pred[i, j] for i in range(h) for j in range(w) if gt[i, j]]
    bg = [1 - pred[i, j] for i in range(h) for j in range(w) if not gt[i, j]]
    obj = u * _ref_s_object(fg) + (1 - u) * _ref_s_object(bg)

    ys, xs = np.nonzero(gt)
    cx = int(np.round(xs.mean())) + 1
    cy = int(np.round(ys.mean())) + 1
    area = h * w
    parts = [
        (cx * cy / area, pred[:cy, :cx], gt[:cy, :cx]),
        (cy * (w - cx) / area, pred[:cy, cx:], gt[:cy, cx:]),
        ((h - cy) * cx / area, pred[cy:, :cx], gt[cy:, :cx]),
    ]
    parts.append((1 - sum(p[0] for p in parts), pred[cy:, cx:], gt[cy:, cx:]))
    region = sum(weight * _ref_ssim(p, g.astype(float)) for weight, p, g in parts if p.size)
    return max(0.0, 0.5 * obj + 0.5 * region)


def ref_e_measure_mean(pred, gt):
    gt = gt.astype(bool)
    scores = []
    for t in range(256):
        fg = (pred >= (t + 0.5) / 256).astype(float)
        if not gt.any():
            scores.append(float(np.mean(1 - fg)))
        elif gt.all():
            scores.append(float(np.mean(fg)))
        else:
            g = gt.astype(float)
            mf, mg = fg.mean(), g.mean()
            total = 0.0
            for a, b in zip(fg.ravel(), g.ravel()):
                da, db = a - mf, b - mg
                align = 2 * da * db / (da * da + db * db + EPS)
                total += (align + 1) ** 2 / 4
            scores.append(total / gt.size)
    return sum(scores) / 256


def ref_f_mean(pred, gt):
    gt = gt.astype(bool)
    scores = []
    for t in range(256):
        fg = pred >= (t + 0.5) / 256
        tp = int(np.sum(fg & gt))
        predicted = int(np.sum(fg))
        precision = tp / predicted if predicted else 0.0
        recall = tp / gt.sum() if gt.sum() else 0.0
        denom = 0.3 * precision + recall
        scores.append(1.3 * precision * recall / denom if denom > 0 else 0.0)
    return sum(scores) / 256


def _fspecial_gaussian(size, sigma):
    m = (size - 1) / 2
    k = np.array([[math.exp(-((i - m) ** 2 + (j - m) ** 2) / (2 * sigma * sigma)) for j in range(size)] for i in range(size)])
    return k / k.sum()


def ref_f_weighted(pred, gt):
    gt = gt.astype(bool)
    if not gt.any():
        return 0.0
    h, w = gt.shape
    dist, (rows, cols) = distance_transform_edt(~gt, return_indices=True)
    error = np.abs(pred - gt)
    spread = np.array([[error[i, j] if gt[i, j] else error[rows[i, j], cols[i, j]] for j in range(w)] for i in range(h)])
    kernel = _fspecial_gaussian(7, 5.0)

    weighted = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if gt[i, j]:
                smoothed = 0.0
                for u in range(-3, 4):
                    for v in range(-3, 4):
                        if 0 <= i + u < h and 0 <= j + v < w:
                            smoothed += kernel[u + 3, v + 3] * spread[i + u, j + v]
                weighted[i, j] = min(smoothed, error[i, j])
            else:
                weighted[i, j] = error[i, j] * (2 - math.exp(math.log(0.5) / 5 * dist[i, j]))

    tp = gt.sum() - weighted[gt].sum()
    fp = weighted[~gt].sum()
    recall = 1 - weighted[gt].mean()
    precision = tp / (tp + fp + EPS)
    return 2 * recall * precision / (recall + precision + EPS)
