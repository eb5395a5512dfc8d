"""Center-side proximal-gradient update of the consensus matrices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .dag import h_and_grad
from .errors import NonFinite
from .prox import dipa, inverse_transform, prox_l1, transform
from .types import PenaltyConfig

_MAX_DOUBLINGS = 200


def smooth_gradient(Z, W, alpha, beta, rho1, rho2, heval=None) -> np.ndarray:
    """alpha grad h + rho1 h grad h - beta + rho2 (Z - W), diagonal zeroed."""
    Z = np.asarray(Z, dtype=np.float64)
    h, gh = heval if heval is not None else h_and_grad(Z)
    g = (alpha + rho1 * h) * gh - beta + rho2 * (Z - W)
    np.fill_diagonal(g, 0.0)
    if not np.all(np.isfinite(g)):
        raise NonFinite("smooth gradient overflowed; the penalty schedule is too aggressive")
    return g


def smooth_value(Z, W, alpha, beta, rho1, rho2, h=None) -> float:
    """Smooth part of the augmented Lagrangian for one site."""
    if h is None:
        h = h_and_grad(Z).value
    diff = W - Z
    return float(alpha * h + 0.5 * rho1 * h * h + np.sum(beta * diff) + 0.5 * rho2 * np.sum(diff * diff))


def _safe_value(Z, W, alpha, beta, rho1, rho2):
    try:
        with np.errstate(over="raise", invalid="raise"):
            v = smooth_value(Z, W, alpha, beta, rho1, rho2)
    except (NonFinite, FloatingPointError):
        return np.inf
    return v if np.isfinite(v) else np.inf


@dataclass
class GlobalStepInput:
    Z_prev: Sequence[np.ndarray]
    W_new: Sequence[np.ndarray]
    alpha: Sequence[float]
    beta: Sequence[np.ndarray]
    rho1: float
    rho2: float
    penalties: PenaltyConfig
    warm: np.ndarray | None = None  # inner prox state carried between steps


class GlobalStepResult(NamedTuple):
    Z: list
    step: np.ndarray  # accepted C per site (equal entries when the prox is joint)
    converged: bool
    backtracks: int
    warm: np.ndarray | None = None


def _prox(points, lambda1, lambda2, C, penalties, joint, warm=None):
    # C is a scalar or one constant per site; unequal constants put the
    # joint prox in the metric sum_k C_k ||.||^2
    d = points[0].shape[0]
    if joint:
        C = np.broadcast_to(np.asarray(C, dtype=np.float64), (len(points),))
        c_ref = float(C.min())
        res = dipa(transform(points), lambda1 / c_ref, lambda2 / c_ref,
                   tol=penalties.dipa_tol, max_iter=penalties.dipa_max_iter, warm=warm,
                   weights=None if np.all(C == c_ref) else C / c_ref)
        Z = inverse_transform(res.Z, d)
        ok, warm = res.converged, res.warm
    else:
        Z = [prox_l1(p, lambda1 / C) for p in points]
        ok = True
    for z in Z:
        np.fill_diagonal(z, 0.0)
    return Z, ok, warm


def _majorized(f_new, f_old, grad, Z_new, Z_old, C):
    diff = Z_new - Z_old
    bound = f_old + np.sum(grad * diff) + 0.5 * C * np.sum(diff * diff)
    return f_new <= bound + 1e-12 * max(1.0, abs(bound))


def global_update(inp: GlobalStepInput, C_start=None, shared: bool = False,
                  floor: str = "augmented", site_steps: bool = False) -> GlobalStepResult:
    """One proximal-gradient step on the consensus matrices with backtracking.

    ``C_start`` optionally warm-starts the step constant (scalar or one per
    site); the search never starts below ``rho2 + rho1 + max |alpha|``.
    When the fusion penalty is inactive (K = 1 or lambda2 = 0) the prox
    separates and every site gets its own step constant. ``shared`` forces a
    single common Z for all sites (the homogeneous baseline).
    With ``site_steps`` the fused case also keeps one constant per site:
    each site's quadratic bound is checked on its own, only failing sites
    double their constant, and the prox is taken in the matching weighted
    metric.
    """
    pen = inp.penalties
    K = len(inp.Z_prev)
    Z_prev = [np.asarray(z, dtype=np.float64) for z in inp.Z_prev]
    W = [np.asarray(w, dtype=np.float64) for w in inp.W_new]
    alpha = np.asarray(inp.alpha, dtype=np.float64)
    evals = [h_and_grad(z) for z in Z_prev]
    grads = [smooth_gradient(Z_prev[k], W[k], alpha[k], inp.beta[k], inp.rho1, inp.rho2, evals[k])
             for k in range(K)]
    f_old = [smooth_value(Z_prev[k], W[k], alpha[k], inp.beta[k], inp.rho1, inp.rho2, evals[k].value)
             for k in range(K)]
    joint = K > 1 and pen.lambda2 > 0 and not shared

    # floor of the backtracking search: the joint prox needs one constant
    if floor == "augmented":
        c0 = inp.rho2 + inp.rho1 + np.abs(alpha)
    elif floor == "quadratic":
        c0 = np.full(K, float(inp.rho2))
    else:
        raise ValueError(f"unknown step floor {floor!r}")
    if shared or (joint and not site_steps):
        c0 = np.full(K, c0.max())
    if C_start is None:
        C_start = c0
    C_start = np.maximum(np.broadcast_to(np.asarray(C_start, dtype=np.float64), (K,)), c0)

    backtracks = 0
    if joint and site_steps:
        C = C_start.copy()
        for _ in range(_MAX_DOUBLINGS):
            points = [Z_prev[k] - grads[k] / C[k] for k in range(K)]
            Z_new, ok, warm = _prox(points, pen.lambda1, pen.lambda2, C, pen, True, inp.warm)
            bad = np.array([
                not _majorized(_safe_value(Z_new[k], W[k], alpha[k], inp.beta[k], inp.rho1, inp.rho2),
                               f_old[k], grads[k], Z_new[k], Z_prev[k], C[k])
                for k in range(K)])
            if not bad.any():
                return GlobalStepResult(Z_new, C, ok, backtracks, warm)
            C[bad] *= 2.0
            backtracks += 1
        raise NonFinite("backtracking failed to find a majorizing step constant")

    if joint or shared:
        C = float(C_start.max())
        for _ in range(_MAX_DOUBLINGS):
            points = [Z_prev[k] - grads[k] / C for k in range(K)]
            if shared:
                Zs, ok, _ = _prox([np.mean(points, axis=0)], pen.lambda1, 0.0, C, pen, False)
                Z_new = [Zs[0].copy() for _ in range(K)]
            else:
                Z_new, ok, warm = _prox(points, pen.lambda1, pen.lambda2, C, pen, True, inp.warm)
            f_new = [_safe_value(Z_new[k], W[k], alpha[k], inp.beta[k], inp.rho1, inp.rho2) for k in range(K)]
            total = sum(f_new)
            if np.isfinite(total) and _majorized(
                    total, sum(f_old),
                    np.concatenate([g.ravel() for g in grads]),
                    np.concatenate([z.ravel() for z in Z_new]),
                    np.concatenate([z.ravel() for z in Z_prev]), C):
                return GlobalStepResult(Z_new, np.full(K, C), ok, backtracks,
                                        None if shared else warm)
            C *= 2.0
            backtracks += 1
        raise NonFinite("backtracking failed to find a majorizing step constant")

    Z_new, steps = [], np.empty(K)
    for k in range(K):
        C = float(C_start[k])
        for _ in range(_MAX_DOUBLINGS):
            (z,), _, _ = _prox([Z_prev[k] - grads[k] / C], pen.lambda1, 0.0, C, pen, False)
            f_new = _safe_value(z, W[k], alpha[k], inp.beta[k], inp.rho1, inp.rho2)
            if _majorized(f_new, f_old[k], grads[k], z, Z_prev[k], C):
                break
            C *= 2.0
            backtracks += 1
        else:
            raise NonFinite("backtracking failed to find a majorizing step constant")
        Z_new.append(z)
        steps[k] = C
    return GlobalStepResult(Z_new, steps, True, backtracks)


def majorizer_value(Z, Z_prev, grads, f_prev, C, lambda1, lambda2) -> float:
    """Quadratic upper model of the smooth part plus the nonsmooth penalty."""
    total = float(np.sum(f_prev))
    Cs = np.broadcast_to(np.asarray(C, dtype=np.float64), (len(Z),))
    for z, zp, g, c in zip(Z, Z_prev, grads, Cs):
        diff = z - zp
        total += float(np.sum(g * diff) + 0.5 * c * np.sum(diff * diff))
    total += lambda1 * sum(float(np.abs(z).sum()) for z in Z)
    for a, b in zip(Z[:-1], Z[1:]):
        total += lambda2 * float(np.linalg.norm(b - a))
    return total
