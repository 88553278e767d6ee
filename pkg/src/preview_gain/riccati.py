"""Per-step l2-gain Riccati operator, state-feedback gains and the periodic baseline.

For a step ``(A, B, Q, R)`` and gain bound ``gamma`` the operator is::

    R_gamma(P) = Q + A'PA - L(P)' M_gamma(P)^{-1} L(P)
    L(P)       = [B I]' P A
    M_gamma(P) = [[R + B'PB, B'P], [PB, P - gamma^2 I]]

``gamma = math.inf`` gives the LQR operator (the disturbance channel drops out).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, FeasibilityError, InputError, NotPositiveDefiniteError, SingularBlockError
from .spd import PD_REL_MARGIN, eig_bounds, riemannian_distance, symmetrize

logger = logging.getLogger(__name__)

RCOND_MIN = 1e-12


@dataclass(frozen=True)
class GainParams:
    gamma: float
    beta: float = 0.0
    epsilon: float = 1e-9

    def __post_init__(self):
        if not self.gamma > 0:
            raise InputError("gamma must be positive")
        if not self.beta >= 0:
            raise InputError("beta must be nonnegative")
        if not self.epsilon > 0:
            raise InputError("epsilon must be positive")

    @property
    def alpha(self):
        return self.gamma + self.beta

    @property
    def eta(self):
        return self.gamma**-2 - (self.gamma + self.beta) ** -2


def _solve_checked(M, rhs, what):
    if 1.0 / np.linalg.cond(M) < RCOND_MIN:
        raise SingularBlockError(f"{what} is singular")
    return np.linalg.solve(M, rhs)


def _inv_gamma2(gamma):
    return 0.0 if math.isinf(gamma) else gamma**-2


def riccati_step(step, gamma, P):
    """Apply ``R_gamma`` to ``P`` through the block-Schur inverse of ``M_gamma(P)``.

    Raises :class:`SingularBlockError` naming the block that failed: the control
    block ``R + B'PB`` or the disturbance Schur complement.
    """
    A, B, Q, R = step.A, step.B, step.Q, step.R
    P = symmetrize(P)
    PA = P @ A
    M11 = R + B.T @ P @ B
    L1 = B.T @ PA
    G1 = _solve_checked(M11, L1, "control block R + B'PB")
    out = Q + A.T @ PA - L1.T @ G1
    if not math.isinf(gamma):
        PB = P @ B
        S = P - gamma**2 * np.eye(P.shape[0]) - PB @ _solve_checked(M11, PB.T, "control block R + B'PB")
        L2 = PA - PB @ G1
        out = out - L2.T @ _solve_checked(S, L2, "disturbance Schur complement P - gamma^2 I - PB(R + B'PB)^-1 B'P")
    return 0.5 * (out + out.T)


def _check_below(P, alpha, what="P"):
    lo, hi = eig_bounds(P)
    if not (hi > 0 and lo > PD_REL_MARGIN * hi):
        raise NotPositiveDefiniteError(f"{what} is not positive definite (min eigenvalue {lo:.3e})")
    if not math.isinf(alpha) and not hi < alpha**2 * (1.0 - 1e-12):
        raise FeasibilityError(f"{what} is not below {alpha:g}^2 I (max eigenvalue {hi:.6g})")


def riccati_step_alt(step, gamma, P):
    """``Q + A'(P^-1 - gamma^-2 I + B R^-1 B')^-1 A`` for PD ``P < gamma^2 I``."""
    P = symmetrize(P)
    _check_below(P, gamma)
    n = P.shape[0]
    Y = np.linalg.inv(P) - _inv_gamma2(gamma) * np.eye(n) + step.B @ np.linalg.solve(step.R, step.B.T)
    out = step.Q + step.A.T @ np.linalg.solve(0.5 * (Y + Y.T), step.A)
    return 0.5 * (out + out.T)


def _woodbury_weight(X, alpha):
    n = X.shape[0]
    W = np.linalg.inv(np.linalg.inv(X) - _inv_gamma2(alpha) * np.eye(n))
    return 0.5 * (W + W.T)


def feedback_gain(step, alpha, X):
    """``K = (R + B'WB)^-1 B'WA`` with ``W = (X^-1 - alpha^-2 I)^-1``.

    The control is ``u = -K x``. ``X`` must be PD and below ``alpha^2 I``.
    """
    X = symmetrize(X)
    _check_below(X, alpha, "X")
    W = _woodbury_weight(X, alpha)
    nabla = step.R + step.B.T @ W @ step.B
    return np.linalg.solve(nabla, step.B.T @ W @ step.A)


def feedback_gain_direct(step, alpha, X):
    """Same gain written as ``W = X + X(alpha^2 I - X)^-1 X``."""
    X = symmetrize(X)
    _check_below(X, alpha, "X")
    if math.isinf(alpha):
        W = X
    else:
        W = X + X @ np.linalg.solve(alpha**2 * np.eye(X.shape[0]) - X, X)
    nabla = step.R + step.B.T @ W @ step.B
    return np.linalg.solve(nabla, step.B.T @ W @ step.A)


def completion_of_squares(step, alpha, X, x, u, w):
    """Terms of the per-step dissipation identity.

    ``z'z - alpha^2 w'w + x1'X x1`` (``lhs``) equals
    ``x'R_alpha(X)x + (u - u*)'nabla(u - u*) + (w - w*)'(X - alpha^2 I)(w - w*)``
    where ``u* = -K x`` and ``w* = -(X - alpha^2 I)^-1 X (Ax + Bu)``.
    """
    A, B = step.A, step.B
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    n = A.shape[0]
    x1 = A @ x + B @ u + w
    z = np.concatenate([step.Q_sqrt @ x, step.R_sqrt @ u])
    lhs = z @ z - alpha**2 * (w @ w) + x1 @ X @ x1
    W = _woodbury_weight(X, alpha)
    nabla = step.R + B.T @ W @ B
    u_star = -feedback_gain(step, alpha, X) @ x
    D = X - alpha**2 * np.eye(n)
    w_star = -np.linalg.solve(D, X @ (A @ x + B @ u))
    value = x @ riccati_step(step, alpha, X) @ x
    du = u - u_star
    dw = w - w_star
    ctrl = du @ nabla @ du
    dist = dw @ D @ dw
    return {"lhs": float(lhs), "value": float(value), "control": float(ctrl), "disturbance": float(dist),
            "residual": float(lhs - (value + ctrl + dist)), "u_star": u_star, "w_star": w_star}


@dataclass
class RiccatiSolution:
    """Periodic solution ``P[t] = R_gamma,t(P[t+1 mod N])`` over one period."""

    P: list
    gamma: float
    lambda_min_inf: float
    margin: float
    residual: float
    residual_frobenius: float
    iterations: int
    history: list = field(default_factory=list, repr=False)

    def at(self, t):
        return self.P[t % len(self.P)]


def solve_periodic(provider, gamma, d=None, tol=1e-10, max_iters=10_000, seed=None):
    """Periodic baseline by fixed-point iteration of the one-period backward map.

    The seed defaults to the terminal upper bound of the ``d``-step lifted block
    at ``t = 0`` (which dominates ``P[0]``), or the identity when ``d`` is not
    given. Iteration stops when successive period iterates are within ``tol`` in
    Riemannian distance.
    """
    if provider.kind != "periodic":
        raise InputError("solve_periodic needs a periodic model")
    N = provider.period
    n = provider.n
    if seed is None:
        if d is not None:
            from .lifting import terminal_bound, transformed_block

            seed = terminal_bound(transformed_block(provider, 0, d, gamma))
        else:
            seed = np.eye(n)
    X = symmetrize(seed)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        Y = X
        for t in range(N - 1, -1, -1):
            Y = riccati_step(provider.step(t), gamma, Y)
        lo, hi = eig_bounds(Y)
        if not (lo > 0 and np.isfinite(hi)):
            raise FeasibilityError(f"loss of positive definiteness after {it} period iterations (min eigenvalue {lo:.3e})")
        if not math.isinf(gamma) and hi >= gamma**2:
            raise FeasibilityError(f"iterate left the region P < gamma^2 I after {it} period iterations "
                                   f"(max eigenvalue {hi:.6g} >= {gamma**2:.6g}): gamma={gamma:g} infeasible")
        change = riemannian_distance(Y, X)
        history.append(change)
        X = Y
        if change <= tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"periodic Riccati iteration did not converge in {max_iters} periods (last change {history[-1]:.3e})")
    P = [None] * N
    Y = X
    for t in range(N - 1, -1, -1):
        Y = riccati_step(provider.step(t), gamma, Y)
        P[t] = Y
    residual = 0.0
    residual_fro = 0.0
    for t in range(N):
        nxt = riccati_step(provider.step(t), gamma, P[(t + 1) % N])
        residual = max(residual, riemannian_distance(P[t], nxt))
        residual_fro = max(residual_fro, np.linalg.norm(P[t] - nxt) / np.linalg.norm(P[t]))
    lam_lo = min(eig_bounds(p)[0] for p in P)
    lam_hi = max(eig_bounds(p)[1] for p in P)
    margin = math.inf if math.isinf(gamma) else gamma**2 - lam_hi
    if lam_lo <= 0:
        raise FeasibilityError("periodic solution is not positive definite")
    if margin <= 0:
        raise FeasibilityError(f"baseline gain bound infeasible at this gamma={gamma:g}: max eigenvalue of P is {lam_hi:.6g} >= gamma^2")
    logger.debug("periodic Riccati converged in %d periods, residual %.3e", it, residual)
    return RiccatiSolution(P, gamma, lam_lo, margin, residual, residual_fro, it, history)


def baseline_gains(provider, solution):
    """Infinite-preview gains ``K[t] = K_gamma,t(P[t+1])`` over one period."""
    N = len(solution.P)
    return [feedback_gain(provider.step(t), solution.gamma, solution.at(t + 1)) for t in range(N)]
