"""Independent reference implementations used as test oracles.

Everything here is deliberately written as plain scalar loops (or direct
formula transcriptions) so it shares no code path with the package.
"""

import math

import numpy as np
import torch


def scalar_mean_abs_diff(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    assert a.size == b.size
    total = 0.0
    for x, y in zip(a, b):
        total += abs(x - y)
    return total / a.size


def scalar_generator_loss(d_teacher, d_student):
    d_teacher = np.asarray(d_teacher, dtype=np.float64).ravel()
    d_student = np.asarray(d_student, dtype=np.float64).ravel()
    return (
        -sum(math.log(d) for d in d_teacher) / d_teacher.size
        - sum(math.log(1.0 - d) for d in d_student) / d_student.size
    )


def scalar_discriminator_loss(d_teacher, d_student):
    d_teacher = np.asarray(d_teacher, dtype=np.float64).ravel()
    d_student = np.asarray(d_student, dtype=np.float64).ravel()
    return (
        -sum(math.log(1.0 - d) for d in d_teacher) / d_teacher.size
        - sum(math.log(d) for d in d_student) / d_student.size
    )


def scalar_total_loss(l_orig, l_spoof, l_s, l_t, lambdas):
    l1, l2, l3, l4 = lambdas
    return l1 * l_orig + l2 * l_spoof + l3 * l_s + l4 * l_t


def scalar_original_loss(depth_pred, depth_target, logit, live_target):
    depth_pred = np.asarray(depth_pred, dtype=np.float64).ravel()
    depth_target = np.asarray(depth_target, dtype=np.float64).ravel()
    mse = sum((p - t) ** 2 for p, t in zip(depth_pred, depth_target)) / depth_pred.size
    logit = np.asarray(logit, dtype=np.float64).ravel()
    live_target = np.asarray(live_target, dtype=np.float64).ravel()
    bce = 0.0
    for z, y in zip(logit, live_target):
        p = 1.0 / (1.0 + math.exp(-z))
        bce += -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))
    return mse + bce / logit.size


def scalar_kl_distillation(teacher_logits, student_logits, temperature):
    t = temperature
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    student_logits = np.asarray(student_logits, dtype=np.float64)
    total = 0.0
    for zt, zs in zip(teacher_logits, student_logits):
        pt = np.exp(zt / t) / np.exp(zt / t).sum()
        ps = np.exp(zs / t) / np.exp(zs / t).sum()
        total += sum(p * math.log(p / q) for p, q in zip(pt, ps))
    return t * t * total / len(teacher_logits)


def threshold_loop(gray, threshold):
    """Per-pixel brute-force thresholding; boundary value maps to 1."""
    gray = np.asarray(gray, dtype=np.float64)
    out = np.zeros(gray.shape, dtype=np.uint8)
    for i in range(gray.shape[0]):
        for j in range(gray.shape[1]):
            out[i, j] = 0 if gray[i, j] < threshold else 1
    return out


def pairwise_auc(scores, labels):
    """AUC as P(spoof > live) + 0.5 P(tie) over all (spoof, live) pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    spoof = scores[labels == 1]
    live = scores[labels == 0]
    wins = (spoof[:, None] > live[None, :]).sum(dtype=np.float64)
    ties = (spoof[:, None] == live[None, :]).sum(dtype=np.float64)
    return (wins + 0.5 * ties) / (spoof.size * live.size)


def fd_gradient(fn, params, eps=1e-5):
    """Central finite differences of a scalar function over a list of
    parameter tensors; returns flat gradient per tensor."""
    grads = []
    for p in params:
        flat = p.detach().view(-1)
        g = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(fn())
            flat[i] = orig - eps
            lo = float(fn())
            flat[i] = orig
            g[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(a, b, floor=1e-12):
    a = torch.as_tensor(a, dtype=torch.float64).ravel()
    b = torch.as_tensor(b, dtype=torch.float64).ravel()
    denom = max(a.norm().item(), b.norm().item(), floor)
    return (a - b).norm().item() / denom


def check_gradients(loss_fn, params, eps=1e-5, tol=1e-4):
    """Autograd vs central differences; asserts relative error under tol."""
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    auto = [p.grad.detach().clone().view(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
            for p in params]
    with torch.no_grad():
        fd = fd_gradient(loss_fn, params, eps=eps)
    worst = 0.0
    for a, f in zip(auto, fd):
        worst = max(worst, rel_error(a, f))
    assert worst < tol, f"gradient mismatch: relative error {worst:.3e} >= {tol}"
    return worst
