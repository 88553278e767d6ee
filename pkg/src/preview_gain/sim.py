"""Closed-loop simulation, the performance functional and empirical gain measurement.

The closed loop ``x[t+1] = A x + B u + w`` with ``u = -K[t] x`` and ``x[0] = 0``
is simulated for disturbances ``w[0..N-1]``. Outputs ``z[t] = (Q^{1/2} x, R^{1/2} u)``
are recorded for ``t = 0..N`` so the last disturbance reaches the output; the
gain sequence therefore has to cover ``t = 0..N``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from ._parallel import pmap
from .errors import ConvergenceError, InputError, PreviewGainError
from .riccati import completion_of_squares
from .spd import riemannian_distance


def _gain_fn(gains, n, m):
    if callable(gains):
        fn = gains
    else:
        seq = list(gains)

        def fn(t):
            if t >= len(seq):
                raise InputError(f"gain sequence has {len(seq)} entries, gain needed at t={t}")
            return seq[t]

    def checked(t):
        K = np.asarray(fn(t), dtype=float)
        if K.shape != (m, n):
            raise InputError(f"gain at t={t} has shape {K.shape}, expected {(m, n)}")
        return K

    return checked


@dataclass
class ClosedLoopTrace:
    """States ``x[0..N]``, inputs ``u[0..N]``, disturbances ``w[0..N-1]``, outputs ``z[0..N]``."""

    N: int
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    z: np.ndarray
    alpha: float | None = None

    @property
    def z_energy(self):
        return np.cumsum(np.sum(self.z**2, axis=-1), axis=-1)

    @property
    def w_energy(self):
        ww = np.sum(self.w**2, axis=-1)
        return np.cumsum(np.concatenate([ww, np.zeros(ww.shape[:-1] + (1,))], axis=-1), axis=-1)

    def running_J(self, alpha=None):
        """Partial sums ``sum_{s<=t} (|z[s]|^2 - alpha^2 |w[s]|^2)`` for ``t = 0..N``."""
        alpha = self.alpha if alpha is None else alpha
        if alpha is None:
            raise InputError("alpha needed for the performance functional")
        return self.z_energy - alpha**2 * self.w_energy

    def J(self, alpha=None):
        return self.running_J(alpha)[..., -1]


class ClosedLoop:
    """The finite-horizon closed-loop map ``w -> z`` and its adjoint."""

    def __init__(self, provider, gains, N):
        if N < 1:
            raise InputError("horizon N must be >= 1")
        self.N = int(N)
        self.n, self.m = provider.dims
        kfn = _gain_fn(gains, self.n, self.m)
        self.A = []
        self.B = []
        self.K = []
        self.Qs = []
        self.Rs = []
        for t in range(self.N + 1):
            s = provider.step(t)
            K = kfn(t)
            self.A.append(s.A)
            self.B.append(s.B)
            self.K.append(K)
            self.Qs.append(s.Q_sqrt)
            self.Rs.append(s.R_sqrt)
        self.Acl = [self.A[t] - self.B[t] @ self.K[t] for t in range(self.N + 1)]

    def _check_w(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape[-2:] != (self.N, self.n):
            raise InputError(f"disturbance must have trailing shape {(self.N, self.n)}, got {w.shape}")
        return w

    def run(self, w):
        """Simulate one disturbance ``(N, n)`` or a batch ``(b, N, n)``."""
        w = self._check_w(w)
        lead = w.shape[:-2]
        x = np.zeros(lead + (self.N + 1, self.n))
        u = np.zeros(lead + (self.N + 1, self.m))
        z = np.zeros(lead + (self.N + 1, self.n + self.m))
        for t in range(self.N + 1):
            xt = x[..., t, :]
            ut = -xt @ self.K[t].T
            u[..., t, :] = ut
            z[..., t, : self.n] = xt @ self.Qs[t].T
            z[..., t, self.n:] = ut @ self.Rs[t].T
            if t < self.N:
                x[..., t + 1, :] = xt @ self.A[t].T + ut @ self.B[t].T + w[..., t, :]
        return x, u, z

    def apply(self, w):
        return self.run(w)[2]

    def adjoint(self, y):
        """``F' y`` for output-space ``y`` of shape ``(..., N+1, n+m)``."""
        y = np.asarray(y, dtype=float)
        if y.shape[-2:] != (self.N + 1, self.n + self.m):
            raise InputError(f"adjoint input must have trailing shape {(self.N + 1, self.n + self.m)}")
        lead = y.shape[:-2]
        out = np.zeros(lead + (self.N, self.n))
        lam = np.zeros(lead + (self.n,))
        for t in range(self.N, -1, -1):
            if t < self.N:
                out[..., t, :] = lam
                lam = lam @ self.Acl[t]
            # C_t = [Q^{1/2}; -R^{1/2} K]
            lam = lam + y[..., t, : self.n] @ self.Qs[t] - (y[..., t, self.n:] @ self.Rs[t]) @ self.K[t]
        return out

    def dense(self):
        """Assemble the map as a matrix (only sensible for small ``N * n``)."""
        eye = np.eye(self.N * self.n).reshape(self.N * self.n, self.N, self.n)
        return self.apply(eye).reshape(self.N * self.n, -1).T


def simulate(provider, gains, w, N=None, alpha=None):
    """Closed-loop trace for disturbance ``w`` (``(N, n)``, or a batch ``(b, N, n)``)."""
    w = np.asarray(w, dtype=float)
    N = w.shape[-2] if N is None else N
    loop = ClosedLoop(provider, gains, N)
    x, u, z = loop.run(w)
    return ClosedLoopTrace(N, x, u, w, z, alpha)


@dataclass
class DissipationReport:
    alpha: float
    residual: np.ndarray
    control: np.ndarray
    disturbance: np.ndarray
    running_J: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def max_residual(self):
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0

    @property
    def passed(self):
        return not self.flags


def dissipation_check(provider, trace, X_next, alpha, tol=1e-8):
    """Per-step completion-of-squares report along a single trace.

    ``X_next(t)`` (or ``X_next[t]``) is the matrix the gain at ``t`` was built
    from. For every step the identity::

        |z|^2 - alpha^2 |w|^2 + x1'X x1 = x'R_alpha(X)x + ctrl + dist

    is evaluated; ``residual`` holds its relative defect. Violations (defect
    above ``tol``, ``X`` not below ``alpha^2 I``, or a positive partial sum of
    ``J_alpha``) are flagged rather than raised.
    """
    Xf = X_next if callable(X_next) else (lambda t: X_next[t])
    N = trace.N
    res = np.zeros(N)
    ctrl = np.zeros(N)
    dist = np.zeros(N)
    flags = []
    for t in range(N):
        step = provider.step(t)
        X = np.asarray(Xf(t), dtype=float)
        try:
            r = completion_of_squares(step, alpha, X, trace.x[t], trace.u[t], trace.w[t])
        except PreviewGainError as exc:
            flags.append(f"t={t}: {exc}")
            res[t] = ctrl[t] = dist[t] = np.nan
            continue
        scale = 1.0 + abs(r["lhs"]) + abs(r["value"]) + abs(r["control"]) + abs(r["disturbance"])
        res[t] = r["residual"] / scale
        ctrl[t] = r["control"]
        dist[t] = r["disturbance"]
        if abs(res[t]) > tol:
            flags.append(f"t={t}: identity defect {res[t]:.3e}")
    J = trace.running_J(alpha)
    jscale = 1.0 + float(np.max(trace.z_energy))
    bad = np.nonzero(J > tol * jscale)[0]
    if bad.size:
        flags.append(f"J_alpha partial sum positive from t={int(bad[0])} (max {float(J.max()):.6g})")
    return DissipationReport(alpha, res, ctrl, dist, J, flags)


@dataclass
class GainReport:
    empirical: float
    certified: float | None
    units: str
    N: int
    iterations: int
    converged: bool
    empirical_scaled: float = math.nan
    dense: float | None = None
    worst_w: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("worst_w")
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _power(loop, rng, tol, max_iter):
    v = rng.standard_normal((loop.N, loop.n))
    v /= np.linalg.norm(v)
    sigma2 = 0.0
    for it in range(1, max_iter + 1):
        g = loop.adjoint(loop.apply(v))
        new = float(np.sum(g * v))
        nrm = np.linalg.norm(g)
        if nrm == 0.0:
            return 0.0, v, it, True
        v = g / nrm
        if abs(new - sigma2) <= tol * max(new, 1e-300):
            return math.sqrt(max(new, 0.0)), v, it, True
        sigma2 = new
    return math.sqrt(max(sigma2, 0.0)), v, max_iter, False


def _lanczos(loop, v0, tol, max_iter):
    size = loop.N * loop.n
    shape = (loop.N, loop.n)
    op = LinearOperator((size, size), dtype=float,
                        matvec=lambda v: loop.adjoint(loop.apply(v.reshape(shape))).ravel())
    try:
        lam, vec = eigsh(op, k=1, which="LA", v0=v0.ravel(), tol=tol, maxiter=max_iter * 10)
    except ArpackNoConvergence:
        return None
    return math.sqrt(max(float(lam[0]), 0.0)), vec[:, 0].reshape(shape)


def empirical_gain(provider, gains, N, method="auto", tol=1e-8, max_iter=500, seed=0, certified=None,
                   units="scaled", strict=False):
    """Largest singular value of the closed-loop map over horizon ``N``.

    Power iteration on ``F'F`` with forward/adjoint simulation; the dense SVD
    is added as a cross-check when ``N*n <= 2000`` (``method="auto"``) or on
    request (``"dense"``/``"both"``). When the power method stalls (clustered
    top singular values) the estimate is refined by Lanczos. With ``units="original"`` values are
    divided back by the model's ``disturbance_scale`` (the disturbance enters
    as ``h * w``). A non-converged power iteration returns its lower bound
    with ``converged=False``, or raises when ``strict``.
    """
    loop = ClosedLoop(provider, gains, N)
    scale = float(provider.meta.get("disturbance_scale", 1.0)) if units == "original" else 1.0
    if units not in ("scaled", "original"):
        raise InputError("units must be 'scaled' or 'original'")
    dense = None
    if method in ("dense", "both") or (method == "auto" and N * loop.n <= 2000):
        dense = float(np.linalg.svd(loop.dense(), compute_uv=False)[0])
    if method == "dense":
        val, v, iters, conv = dense, None, 0, True
    else:
        val, v, iters, conv = _power(loop, np.random.default_rng(seed), tol, max_iter)
        if not conv and method in ("auto", "power", "both"):
            # Clustered top singular values (long periodic horizons) stall the
            # power method; Lanczos on the same operator resolves them.
            refined = _lanczos(loop, v, tol, max_iter)
            if refined is not None and refined[0] >= val * (1 - 1e-12):
                val, v = refined
                conv = True
        if not conv and strict:
            raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations (lower bound {val:.8g})")
    best = val if dense is None else max(val, dense)
    return GainReport(best * scale, None if certified is None else certified * scale, units, N, iters, conv,
                      best, None if dense is None else dense * scale, v)


def disturbance_ensemble(count, N, n, seed=0, taper=None):
    """Seeded unit-norm disturbances ``(count, N, n)`` with geometrically decaying energy."""
    rng = np.random.default_rng(seed)
    taper = 0.5 ** (1.0 / max(1.0, N / 8.0)) if taper is None else taper
    w = rng.standard_normal((count, N, n)) * (taper ** np.arange(N))[None, :, None]
    w /= np.linalg.norm(w.reshape(count, -1), axis=1)[:, None, None]
    return w


@dataclass
class DeltaReport:
    values: np.ndarray
    max: float


def measure_delta(Xs, Ps, threads=None):
    """Per-index Riemannian distances between aligned PD sequences."""
    Xs, Ps = list(Xs), list(Ps)
    if len(Xs) != len(Ps):
        raise InputError(f"sequences differ in length ({len(Xs)} vs {len(Ps)})")
    vals = np.array(pmap(lambda p: riemannian_distance(*p), list(zip(Xs, Ps)), threads))
    return DeltaReport(vals, float(vals.max()) if vals.size else 0.0)


def write_trace_csv(path_or_fh, trace, alpha, header=None):
    """Columns ``t, x..., u..., w..., z_norm2, running_J`` for ``t = 0..N``."""
    if trace.x.ndim != 2:
        raise InputError("trace CSV needs a single (non-batched) trace")
    own = isinstance(path_or_fh, str)
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    n, m = trace.x.shape[1], trace.u.shape[1]
    J = trace.running_J(alpha)
    try:
        for line in header or ():
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
                    + [f"w{i}" for i in range(n)] + ["z_norm2", "running_J"])
        for t in range(trace.N + 1):
            wt = trace.w[t] if t < trace.N else np.zeros(n)
            row = [t] + [repr(float(v)) for v in (*trace.x[t], *trace.u[t], *wt)]
            row += [repr(float(trace.z[t] @ trace.z[t])), repr(float(J[t]))]
            wr.writerow(row)
    finally:
        if own:
            fh.close()
