"""Reference implementations used only by the tests.

Everything here is written from the definitions with explicit loops (or plain
Monte Carlo), deliberately sharing no code with the package, so agreement is
evidence rather than tautology.
"""

import math

import numpy as np
import torch


def dice_loss_ref(probs, target, smooth=1e-5):
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target)
    B, K, H, W = probs.shape
    scores = []
    for b in range(B):
        for k in range(K):
            inter = p_sum = t_sum = 0.0
            for y in range(H):
                for x in range(W):
                    p = probs[b, k, y, x]
                    t = 1.0 if target[b, y, x] == k else 0.0
                    inter += p * t
                    p_sum += p
                    t_sum += t
            scores.append((2.0 * inter + smooth) / (p_sum + t_sum + smooth))
    return 1.0 - sum(scores) / len(scores)


def cross_entropy_ref(probs, target, clamp=1e-12):
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target)
    B, K, H, W = probs.shape
    terms = []
    for b in range(B):
        for y in range(H):
            for x in range(W):
                terms.append(-math.log(max(probs[b, target[b, y, x], y, x], clamp)))
    return sum(terms) / len(terms)


def reconstruction_ref(x, x_hat):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    return float(np.abs(x - x_hat).mean())


def kl_closed_ref(mean, logvar):
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    per_sample = 0.5 * (mean**2 + np.exp(logvar) - logvar - 1.0).sum(axis=1)
    return float(per_sample.mean())


def kl_monte_carlo_ref(mean, logvar, n, rng):
    """KL(q || unit normal) as the sample mean of log q(x) - log p(x), x ~ q."""
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    per_sample = []
    for mu, lv in zip(mean, logvar):
        sigma = np.exp(0.5 * lv)
        x = mu[None, :] + sigma[None, :] * rng.standard_normal((n, mu.size))
        log_q = (-0.5 * ((x - mu) / sigma) ** 2 - 0.5 * np.log(2 * np.pi) - 0.5 * lv).sum(axis=1)
        log_p = (-0.5 * x**2 - 0.5 * np.log(2 * np.pi)).sum(axis=1)
        per_sample.append(float((log_q - log_p).mean()))
    return float(np.mean(per_sample))


def style_contrastive_ref(codes, tau, permutations):
    """Every pair built explicitly with scalar arithmetic."""

    def cos(u, v):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        nu = max(float(np.linalg.norm(u)), 1e-12)
        nv = max(float(np.linalg.norm(v)), 1e-12)
        return float(u @ v) / (nu * nv)

    domains = sorted(codes)
    per_domain = []
    for d in domains:
        batch = np.asarray(codes[d], dtype=np.float64)
        b = batch.shape[0]
        terms = []
        for i in range(b):
            pos = cos(batch[i], batch[permutations[d][i]])
            negatives = [cos(batch[i], np.asarray(codes[e])[i]) for e in domains if e != d]
            numerator = math.exp(pos / tau)
            denominator = numerator + sum(math.exp(s / tau) for s in negatives)
            terms.append(-math.log(numerator / denominator))
        per_domain.append(sum(terms) / len(terms))
    return sum(per_domain) / len(per_domain)


def consistency_ref(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).mean())


def dice_score_ref(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    inter = p = g = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            if pred[y, x]:
                p += 1
            if gt[y, x]:
                g += 1
            if pred[y, x] and gt[y, x]:
                inter += 1
    if p + g == 0:
        return 100.0
    return 100.0 * 2.0 * inter / (p + g)


def boundary_ref(mask):
    mask = np.asarray(mask).astype(bool)
    H, W = mask.shape
    out = np.zeros((H, W), dtype=bool)
    for y in range(H):
        for x in range(W):
            if not mask[y, x]:
                continue
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if not (0 <= ny < H and 0 <= nx < W) or not mask[ny, nx]:
                    out[y, x] = True
                    break
    return out


def asd_ref(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if not pred.any() or not gt.any():
        return math.hypot(pred.shape[0], pred.shape[1])
    pb = [tuple(p) for p in np.argwhere(boundary_ref(pred))]
    gb = [tuple(p) for p in np.argwhere(boundary_ref(gt))]

    def mean_min(src, dst):
        return sum(min(math.dist(s, d) for d in dst) for s in src) / len(src)

    return 0.5 * (mean_min(pb, gb) + mean_min(gb, pb))


def fd_gradient(scalar_fn, tensor, eps=1e-6):
    """Central finite differences of scalar_fn w.r.t. every element of tensor.

    ``scalar_fn`` must re-run the full forward pass and return a Python float;
    ``tensor`` is modified in place during probing and restored afterwards.
    """
    grad = torch.zeros_like(tensor)
    flat = tensor.reshape(-1)
    grad_flat = grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + eps
            f_plus = scalar_fn()
            flat[i] = original - eps
            f_minus = scalar_fn()
            flat[i] = original
            grad_flat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_rel_error(analytic, numeric, floor=1e-7):
    """max over elements of |a - n| / (floor/1e-4 normalization).

    Returns the largest ratio |a - n| / (floor + max(|a|, |n|)); a value below
    1e-4 means every element satisfies |a - n| <= 1e-7 + 1e-4 * max(|a|, |n|)
    up to the shared scaling.
    """
    analytic = analytic.detach().to(torch.float64)
    numeric = numeric.detach().to(torch.float64)
    diff = (analytic - numeric).abs()
    scale = floor / 1e-4 + torch.maximum(analytic.abs(), numeric.abs())
    return float((diff / scale).max())
