"""d-step lifting, transformed lifted data and the preview-length certificate.

Over ``d`` consecutive steps starting at ``s = t + d*k`` the model becomes one
lifted step::

    x[s+d] = A_lift x[s] + B_lift u_lift + F_lift w_lift
    z_lift = (C_lift x[s] + D_lift u_lift + E_lift w_lift,  R_lift^{1/2} u_lift)

where ``u_lift``/``w_lift`` stack the ``d`` inputs and the first component of
``z_lift`` stacks ``Q^{1/2} x`` over the ``d`` steps. Absorbing the feedthrough
``[D_lift E_lift]`` gives the transformed data (``B_til``, ``R_til``, ``Q_til``,
``A_til``) for which the lifted Riccati map takes the standard form
``Q_til + A_til'(X^-1 + B_til R_til^-1 B_til')^-1 A_til``.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from ._parallel import pmap
from .errors import FeasibilityError, InputError, NotPositiveDefiniteError, SingularBlockError
from .spd import PD_REL_MARGIN, eig_bounds, is_pd, symmetrize

RCOND_MIN = 1e-12


@dataclass(frozen=True, eq=False)
class LiftedBlock:
    """Lifted model over steps ``[start, start + d)`` with ``start = t + d*k``."""

    t: int
    k: int
    d: int
    A_lift: np.ndarray
    B_lift: np.ndarray
    F_lift: np.ndarray
    C_lift: np.ndarray
    D_lift: np.ndarray
    E_lift: np.ndarray
    R_lift: np.ndarray

    @property
    def start(self):
        return self.t + self.d * self.k

    @property
    def n(self):
        return self.A_lift.shape[0]

    @property
    def m(self):
        return self.B_lift.shape[1] // self.d

    @property
    def R_lift_sqrt(self):
        # R_lift is block diagonal, so its square root is too; the per-step
        # roots are stored alongside for exact reassembly.
        return self._R_sqrt

    def simulate(self, x, u_lift, w_lift):
        """One lifted step: returns ``(x[start+d], z_lift)`` in the lifted output order."""
        x1 = self.A_lift @ x + self.B_lift @ u_lift + self.F_lift @ w_lift
        zq = self.C_lift @ x + self.D_lift @ u_lift + self.E_lift @ w_lift
        return x1, np.concatenate([zq, self._R_sqrt @ u_lift])


def lift_block(provider, t, k=0, d=1):
    """Assemble the lifted block by forward substitution through the ``d`` steps."""
    if d < 1:
        raise InputError("d must be >= 1")
    n, m = provider.dims
    start = t + d * k
    # Rows of x[start+j] as affine maps of (x[start], u_lift, w_lift).
    Px = np.eye(n)
    Pu = np.zeros((n, m * d))
    Pw = np.zeros((n, n * d))
    C = np.empty((n * d, n))
    D = np.empty((n * d, m * d))
    E = np.empty((n * d, n * d))
    R_lift = np.zeros((m * d, m * d))
    R_sqrt = np.zeros((m * d, m * d))
    for j in range(d):
        st = provider.step(start + j)
        rows = slice(j * n, (j + 1) * n)
        C[rows] = st.Q_sqrt @ Px
        D[rows] = st.Q_sqrt @ Pu
        E[rows] = st.Q_sqrt @ Pw
        cols = slice(j * m, (j + 1) * m)
        R_lift[cols, cols] = st.R
        R_sqrt[cols, cols] = st.R_sqrt
        Px = st.A @ Px
        Pu = st.A @ Pu
        Pu[:, cols] += st.B
        Pw = st.A @ Pw
        Pw[:, j * n:(j + 1) * n] += np.eye(n)
    block = LiftedBlock(t, k, d, Px, Pu, Pw, C, D, E, R_lift)
    object.__setattr__(block, "_R_sqrt", R_sqrt)
    return block


def transformed_R(block, gamma):
    """``[[R_lift + D'D, D'E], [E'D, E'E - gamma^2 I]]`` (symmetric, indefinite)."""
    DE = np.hstack([block.D_lift, block.E_lift])
    Rt = DE.T @ DE
    md = block.m * block.d
    Rt[:md, :md] += block.R_lift
    Rt[md:, md:] -= gamma**2 * np.eye(block.n * block.d)
    return 0.5 * (Rt + Rt.T)


@dataclass(frozen=True, eq=False)
class TransformedBlock:
    """Transformed lifted data of one block for a given ``gamma``."""

    B_til: np.ndarray
    R_til: np.ndarray
    Q_til: np.ndarray
    A_til: np.ndarray
    gamma: float
    block: LiftedBlock = field(default=None, repr=False)
    R_til_eigs: np.ndarray = field(default=None, repr=False)
    BRB: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.BRB is None:
            G = self.B_til @ np.linalg.solve(self.R_til, self.B_til.T)
            object.__setattr__(self, "BRB", 0.5 * (G + G.T))
        if self.R_til_eigs is None:
            object.__setattr__(self, "R_til_eigs", np.linalg.eigvalsh(self.R_til))

    @property
    def n(self):
        return self.Q_til.shape[0]

    @cached_property
    def A_til_inv(self):
        return np.linalg.inv(self.A_til)

    @cached_property
    def upper(self):
        """``Q_til + A_til'(B_til R_til^-1 B_til')^-1 A_til``; dominates the lifted map."""
        U = self.Q_til + self.A_til.T @ np.linalg.solve(self.BRB, self.A_til)
        return 0.5 * (U + U.T)

    @cached_property
    def lower(self):
        """``Q_til + Q_til A_til^-1 BRB A_til^-T Q_til``."""
        Ai = self.A_til_inv
        L = self.Q_til + self.Q_til @ Ai @ self.BRB @ Ai.T @ self.Q_til
        return 0.5 * (L + L.T)

    def part2(self):
        """Extremes for the three uniform-bound conditions on this block."""
        sv = np.abs(self.R_til_eigs)
        g = eig_bounds(self.BRB)
        q = eig_bounds(self.Q_til)
        return {
            "RtR_min": float(sv.min() ** 2),
            "RtR_max": float(sv.max() ** 2),
            "BRB_min": g[0],
            "BRB_max": g[1],
            "Q_min": q[0],
            "Q_max": q[1],
        }

    def part2_failures(self):
        p = self.part2()
        out = []
        if not p["RtR_min"] > (PD_REL_MARGIN**2) * p["RtR_max"]:
            out.append("R_til singular")
        if not (p["BRB_max"] > 0 and p["BRB_min"] > PD_REL_MARGIN * p["BRB_max"]):
            out.append(f"B_til R_til^-1 B_til' not positive definite (min eigenvalue {p['BRB_min']:.3e})")
        if not (p["Q_max"] > 0 and p["Q_min"] > PD_REL_MARGIN * p["Q_max"]):
            out.append(f"Q_til not positive definite (min eigenvalue {p['Q_min']:.3e})")
        return out


def transform_block(block, gamma):
    """Absorb the lifted feedthrough into ``(B_til, R_til, Q_til, A_til)``.

    Raises :class:`SingularBlockError` when ``R_til`` is singular, i.e. gamma sits
    on the feasibility boundary for this block.
    """
    Rt = transformed_R(block, gamma)
    # Jacobi scaling: the -gamma^2 block would otherwise dominate the
    # conditioning test and hide (or fake) singularity at large gamma.
    dg = np.abs(np.diag(Rt))
    sc = 1.0 / np.sqrt(np.where(dg > 0, dg, 1.0))
    lam, V = np.linalg.eigh(sc[:, None] * Rt * sc[None, :])
    amax = np.abs(lam).max()
    if np.abs(lam).min() <= RCOND_MIN * amax:
        raise SingularBlockError(f"R_til singular at block start={block.start}: gamma on the boundary of feasibility for this block",
                                 block=(block.t, block.k))
    DE = np.hstack([block.D_lift, block.E_lift])
    Bt = np.hstack([block.B_lift, block.F_lift])
    Rinv = sc[:, None] * ((V / lam) @ V.T) * sc[None, :]
    S = Rinv @ (DE.T @ block.C_lift)
    Qt = block.C_lift.T @ block.C_lift - block.C_lift.T @ DE @ S
    At = block.A_lift - Bt @ S
    G = Bt @ Rinv @ Bt.T
    if 1.0 / np.linalg.cond(At) < RCOND_MIN:
        # Cannot happen when R_til is invertible and A_lift is; guarded anyway.
        raise SingularBlockError(f"A_til singular at block start={block.start}", block=(block.t, block.k))
    return TransformedBlock(Bt, Rt, 0.5 * (Qt + Qt.T), At, gamma, block, None, 0.5 * (G + G.T))


def transformed_block(provider, start, d, gamma):
    return transform_block(lift_block(provider, start, 0, d), gamma)


class BlockCache:
    """Memoizes transformed blocks by ``provider.key(start)``.

    For periodic models only one period of distinct blocks exists, so the cache
    turns a sweep over many ``t`` into at most ``N`` block constructions. Cached
    and fresh blocks are computed by the same code path and are bit-identical.
    """

    def __init__(self, provider, d, gamma):
        self.provider = provider
        self.d = d
        self.gamma = gamma
        self._store = {}
        self._lock = threading.Lock()

    def __call__(self, start):
        key = self.provider.key(start)
        tb = self._store.get(key)
        if tb is None:
            tb = transformed_block(self.provider, start, self.d, self.gamma)
            with self._lock:
                self._store.setdefault(key, tb)
        return tb


def lifted_riccati(tb, X):
    """``Q_til + A_til' X^{1/2}(I + X^{1/2} BRB X^{1/2})^{-1} X^{1/2} A_til`` for PD ``X``."""
    X = symmetrize(X)
    w, V = np.linalg.eigh(X)
    if not (w[-1] > 0 and w[0] > PD_REL_MARGIN * w[-1]):
        raise NotPositiveDefiniteError(f"lifted Riccati argument is not positive definite (min eigenvalue {w[0]:.3e})")
    S = (V * np.sqrt(w)) @ V.T
    M = np.eye(len(w)) + S @ tb.BRB @ S
    if 1.0 / np.linalg.cond(M) < RCOND_MIN:
        raise SingularBlockError("I + X^{1/2} B_til R_til^-1 B_til' X^{1/2} is singular")
    SA = S @ tb.A_til
    out = tb.Q_til + SA.T @ np.linalg.solve(M, SA)
    return 0.5 * (out + out.T)


def lifted_riccati_saddle(block, gamma, P):
    """Lifted operator in its untransformed saddle form.

    ``C'C + A'PA - L(P)' M(P)^-1 L(P)`` with ``L(P) = [D E]'C + B_til'P A_lift``
    and ``M(P) = R_til + B_til' P B_til``. Used as an independent check of
    :func:`lifted_riccati`; valid for symmetric ``P`` whenever ``M(P)`` is invertible.
    """
    P = symmetrize(P)
    Bt = np.hstack([block.B_lift, block.F_lift])
    DE = np.hstack([block.D_lift, block.E_lift])
    C, A = block.C_lift, block.A_lift
    L = DE.T @ C + Bt.T @ P @ A
    M = transformed_R(block, gamma) + Bt.T @ P @ Bt
    if 1.0 / np.linalg.cond(M) < RCOND_MIN:
        raise SingularBlockError("lifted M(P) is singular")
    out = C.T @ C + A.T @ P @ A - L.T @ np.linalg.solve(M, L)
    return 0.5 * (out + out.T)


def terminal_bound(tb):
    """``Q_til + A_til'(B_til R_til^-1 B_til')^-1 A_til``, the terminal matrix of a block."""
    if tb.part2_failures():
        raise FeasibilityError(f"terminal block fails the uniform bounds: {'; '.join(tb.part2_failures())}")
    return tb.upper


@dataclass
class ContractionStats:
    zeta: float
    eps: float
    rho: float
    omega: float


def contraction_stats(tb):
    """Contraction rate of the lifted Riccati map in the Riemannian metric."""
    fails = tb.part2_failures()
    if fails:
        raise FeasibilityError("; ".join(fails))
    zeta = 1.0 / eig_bounds(tb.lower)[0]
    eps = 1.0 / eig_bounds(tb.upper)[1]
    return ContractionStats(zeta, eps, zeta / (zeta + eps), eps / zeta)


def deadbeat_gain(block):
    """Gains of the lifted deadbeat input ``u_lift = Kx x + Kw w_lift``.

    ``Kx = -B'(BB')^-1 A_lift`` and ``Kw = -B'(BB')^-1 F_lift``, so the lifted
    state is annihilated in one block step.
    """
    BB = block.B_lift @ block.B_lift.T
    if not is_pd(BB):
        raise FeasibilityError(f"B_lift B_lift' is singular at block start={block.start}")
    Bp = block.B_lift.T @ np.linalg.inv(BB)
    return -Bp @ block.A_lift, -Bp @ block.F_lift


# --- certificate ---------------------------------------------------------

@dataclass
class BlockConstants:
    """Window extremes of the per-block quantities entering the preview bound."""

    d: int
    gamma: float
    n: int
    kappa_lo: float
    delta_up: float
    rho_up: float
    extremes: dict
    failures: list
    window: str
    rho_per_block: list = field(default_factory=list, repr=False)

    @property
    def part2_pass(self):
        return not self.failures


def scan_blocks(provider, d, gamma, window=None, cache=None, threads=None):
    """Evaluate the uniform-in-t constants over ``window`` (one period for periodic models)."""
    if window is None:
        window = provider.default_window(d)
    cache = cache or BlockCache(provider, d, gamma)

    def one(t):
        try:
            tb = cache(t)
        except SingularBlockError as exc:
            return t, None, [str(exc)]
        fails = tb.part2_failures()
        if fails:
            return t, tb.part2(), [f"t={t}: {f}" for f in fails]
        p = tb.part2()
        p["ratio"] = eig_bounds(tb.upper)[1] / p["Q_min"]
        cs = contraction_stats(tb)
        p["rho"] = cs.rho
        return t, p, []

    results = pmap(one, list(window), threads)
    failures = [f for _, _, fs in results for f in fs]
    stats = [p for _, p, fs in results if p is not None and not fs]
    keys = ("RtR", "BRB", "Q")
    extremes = {}
    for key in keys:
        vals = [p for _, p, _ in results if p is not None]
        if vals:
            extremes[f"{key}_min"] = min(v[f"{key}_min"] for v in vals)
            extremes[f"{key}_max"] = max(v[f"{key}_max"] for v in vals)
    if stats and not failures:
        kappa = min(p["Q_min"] for p in stats)
        delta_up = math.sqrt(provider.n) * math.log(max(p["ratio"] for p in stats))
        rho_up = max(p["rho"] for p in stats)
        rho_list = [p["rho"] for p in stats]
    else:
        kappa = delta_up = rho_up = float("nan")
        rho_list = []
    return BlockConstants(d, gamma, provider.n, kappa, delta_up, rho_up, extremes, failures,
                          provider.window_note(window), rho_list)


def preview_bound(kappa_lo, delta_up, rho_up, eta):
    """``log(log((alpha + 1)^(1/delta_up))) / log(rho_up)`` with ``alpha = eta * kappa_lo``.

    Natural logarithms throughout. Returns ``inf`` when no finite preview
    suffices (``eta = 0``) and ``-inf`` when ``delta_up = 0``.
    """
    alpha = eta * kappa_lo
    if alpha <= 0:
        return math.inf
    if delta_up <= 0:
        return -math.inf
    return math.log(math.log1p(alpha) / delta_up) / math.log(rho_up)


def smallest_T_above(T_bar):
    """Smallest integer ``T >= 1`` strictly above ``T_bar`` (robust to round-off at integers)."""
    if math.isinf(T_bar):
        return None if T_bar > 0 else 1
    return max(1, math.floor(T_bar + 1e-9 * max(1.0, abs(T_bar))) + 1)


@dataclass
class PreviewCertificate:
    kappa_lo: float
    delta_up: float
    rho_up: float
    eta: float
    alpha_lo: float
    T_bar: float
    T_chosen: int | None
    d: int
    gamma: float
    beta: float
    part2_pass: bool
    extremes: dict
    reasons: list
    window: str

    @property
    def feasible(self):
        return not self.reasons

    @property
    def preview_steps(self):
        """Model steps ahead of ``t`` used by the construction, ``d * (T_chosen + 1)``."""
        return None if self.T_chosen is None else self.d * (self.T_chosen + 1)

    def bound_at(self, T):
        return self.rho_up**T * self.delta_up

    def to_dict(self):
        d = asdict(self)
        d["feasible"] = self.feasible
        d["preview_steps"] = self.preview_steps
        d["T_bar"] = _json_float(self.T_bar)
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _json_float(x):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def certificate_from_constants(consts, beta):
    gamma = consts.gamma
    eta = gamma**-2 - (gamma + beta) ** -2
    reasons = list(consts.failures)
    if not consts.part2_pass:
        T_bar, T_chosen, alpha = math.nan, None, math.nan
    else:
        alpha = eta * consts.kappa_lo
        if not consts.rho_up < 1:
            reasons.append(f"contraction bound rho_up={consts.rho_up:.6g} is not below 1")
        if not consts.kappa_lo > 0:
            reasons.append(f"kappa_lo={consts.kappa_lo:.6g} is not positive")
        if reasons:
            T_bar, T_chosen = math.nan, None
        else:
            T_bar = preview_bound(consts.kappa_lo, consts.delta_up, consts.rho_up, eta)
            T_chosen = smallest_T_above(T_bar)
            if T_chosen is None:
                reasons.append("beta = 0: no finite preview length is sufficient")
    return PreviewCertificate(consts.kappa_lo, consts.delta_up, consts.rho_up, eta, alpha, T_bar, T_chosen,
                              consts.d, gamma, beta, consts.part2_pass, consts.extremes, reasons, consts.window)


def certificate(provider, d, gamma, beta, window=None, cache=None, threads=None):
    """Preview-length certificate for loss tolerance ``beta`` over baseline ``gamma``."""
    if beta < 0:
        raise InputError("beta must be nonnegative")
    return certificate_from_constants(scan_blocks(provider, d, gamma, window, cache, threads), beta)
