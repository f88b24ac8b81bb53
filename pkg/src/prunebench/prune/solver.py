"""LASSO channel selection and least-squares filter reconstruction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import PruningProblem

RIDGE = 1e-8
LAMBDA_START = 1e-4
LAMBDA_GROWTH = 1.3


@dataclass
class Selection:
    beta: np.ndarray  # 0/1 per input channel
    kept: list[int]
    residual: float  # 1/(2N) * ||Y - X_kept W'^T||_F^2 after reconstruction
    weights: np.ndarray  # reconstructed filter over kept channels, (n, |kept|, k_h, k_w)
    relative_residual: float  # ||Y - X_kept W'^T||^2 / ||Y||^2
    method: str = "lasso"
    lambdas: list[float] = field(default_factory=list)


def lasso_gram(G: np.ndarray, b: np.ndarray, lam: float, beta0=None, max_iter: int = 500,
               tol: float = 1e-10) -> np.ndarray:
    """Cyclic coordinate descent for 0.5*||y - Z beta||^2 + lam*||beta||_1.

    Works on the Gram form: ``G = Z^T Z`` and ``b = Z^T y``.
    """
    c = G.shape[0]
    beta = np.zeros(c) if beta0 is None else np.array(beta0, dtype=np.float64)
    diag = np.diag(G)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    for _ in range(max_iter):
        biggest = 0.0
        for j in range(c):
            if diag[j] <= 0:
                beta[j] = 0.0
                continue
            rho = b[j] - G[j] @ beta + diag[j] * beta[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / diag[j]
            biggest = max(biggest, abs(new - beta[j]) * diag[j])
            beta[j] = new
        if biggest <= tol * scale:
            break
    return beta


def reconstruct_weights(p: PruningProblem, kept) -> tuple[np.ndarray, float]:
    """Least-squares refit of the filter on ``kept`` input channels.

    Solves the ridge-stabilised normal equations and returns
    ``(W', objective)`` with ``W'`` of shape (n, |kept|, k_h, k_w).
    """
    kept = sorted(int(k) for k in kept)
    if not kept:
        raise ValueError("at least one channel must be kept")
    if kept[0] < 0 or kept[-1] >= p.channels:
        raise IndexError(f"kept channel out of range for {p.channels} channels")
    N = p.samples
    kh, kw = p.X.shape[2:]
    A = p.X[:, kept].reshape(N, -1)
    lhs = A.T @ A
    lhs[np.diag_indices_from(lhs)] += RIDGE
    sol = np.linalg.solve(lhs, A.T @ p.Y)  # (|kept|*kh*kw, n)
    resid = p.Y - A @ sol
    W = sol.T.reshape(p.W.shape[0], len(kept), kh, kw)
    return W, p.objective(float(np.sum(resid * resid)))


def _finish(p: PruningProblem, kept, method: str, lambdas=()) -> Selection:
    kept = sorted(int(k) for k in kept)
    W, obj = reconstruct_weights(p, kept)
    beta = np.zeros(p.channels)
    beta[kept] = 1.0
    yy = p.y_norm_sq
    rel = 2 * p.samples * obj / yy if yy > 0 else 0.0
    return Selection(beta, kept, obj, W, rel, method, list(lambdas))


def norm_ranked(p: PruningProblem, Z=None) -> list[int]:
    """Baseline: keep the channels whose individual response has the largest norm."""
    Z = p.channel_responses() if Z is None else Z
    norms = np.sqrt(np.sum(Z * Z, axis=(1, 2)))
    order = np.argsort(-norms, kind="stable")
    return sorted(order[: p.budget].tolist())


def lasso_path_selection(p: PruningProblem, Z=None) -> tuple[list[int], list[float]]:
    """Raise the l1 penalty geometrically until at most ``budget`` coefficients survive.

    If the last step overshoots (fewer survivors than the budget), the channels
    that left the active set most recently fill the remaining slots.
    """
    Z = p.channel_responses() if Z is None else Z
    c = p.channels
    flat = Z.reshape(c, -1)
    G = flat @ flat.T
    b = flat @ p.Y.ravel()
    lam = LAMBDA_START * float(np.max(np.abs(b)))
    if lam <= 0:
        return list(range(p.budget)), []
    last_alive = np.full(c, -1)
    last_mag = np.zeros(c)
    beta = None
    lambdas = []
    step = 0
    while True:
        beta = lasso_gram(G, b, lam, beta)
        lambdas.append(lam)
        alive = beta != 0
        last_alive[alive] = step
        last_mag[alive] = np.abs(beta[alive])
        if alive.sum() <= p.budget:
            break
        lam *= LAMBDA_GROWTH
        step += 1
    order = sorted(range(c), key=lambda i: (-last_alive[i], -last_mag[i], i))
    return sorted(order[: p.budget]), lambdas


def solve_selection(p: PruningProblem) -> Selection:
    """Pick at most ``budget`` input channels minimising the reconstruction residual.

    The LASSO path proposes a subset; the norm-ranked subset is evaluated as
    well and the lower residual wins, so the result is never worse than that
    baseline.
    """
    if p.budget >= p.channels:
        return _finish(p, range(p.channels), "all")
    Z = p.channel_responses()
    kept, lambdas = lasso_path_selection(p, Z)
    best = _finish(p, kept, "lasso", lambdas)
    baseline = norm_ranked(p, Z)
    if baseline != best.kept:
        alt = _finish(p, baseline, "norm", lambdas)
        if alt.residual < best.residual:
            best = alt
    return best
