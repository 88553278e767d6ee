"""Time-varying model data for ``x[t+1] = A[t] x[t] + B[t] u[t] + w[t]``.

The performance output is ``z[t] = (Q[t]^{1/2} x[t], R[t]^{1/2} u[t])``.
A :class:`ModelProvider` is the single place where the time index lives; every
other module asks it for ``step(t)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import InputError
from .spd import TOL_SYM, psd_sqrt, symmetrize

RCOND_MIN = 1e-12


@dataclass(frozen=True, eq=False)
class StepData:
    """Model data ``(A, B, Q, R)`` at one time step.

    Only shapes and symmetry are enforced on construction. Invertibility of
    ``A`` and definiteness of ``R`` are checked by :func:`check_assumptions`, so
    that defective models can still be built and diagnosed.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        B = np.array(self.B, dtype=float, ndmin=2)
        n = A.shape[0]
        if A.shape != (n, n):
            raise InputError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise InputError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        Q = symmetrize(np.array(self.Q, dtype=float, ndmin=2))
        R = symmetrize(np.array(self.R, dtype=float, ndmin=2))
        if Q.shape != (n, n):
            raise InputError(f"Q must be {n}x{n}, got {Q.shape}")
        if R.shape != (m, m):
            raise InputError(f"R must be {m}x{m}, got {R.shape}")
        for name, arr in (("A", A), ("B", B), ("Q", Q), ("R", R)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def dims(self):
        return self.n, self.m

    @cached_property
    def Q_sqrt(self):
        return psd_sqrt(self.Q)

    @cached_property
    def R_sqrt(self):
        return psd_sqrt(self.R)

    def issues(self, rcond_min=RCOND_MIN, tol_sym=TOL_SYM):
        """List of Assumption-1 style defects of this step (empty when fine)."""
        out = []
        if 1.0 / np.linalg.cond(self.A) < rcond_min:
            out.append("A is singular to working precision")
        r = np.linalg.eigvalsh(self.R)
        if r[0] <= 0.0 or 1.0 / np.linalg.cond(self.R) < rcond_min:
            out.append("R is not positive definite")
        q = np.linalg.eigvalsh(self.Q)
        if q[0] < -tol_sym * (1.0 + abs(q[-1])):
            out.append("Q is not positive semidefinite")
        return out

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("A", "B", "Q", "R")}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["A"], d["B"], d["Q"], d["R"])
        except KeyError as exc:
            raise InputError(f"step is missing field {exc}") from None


class ModelProvider:
    """Supplies ``StepData`` for ``t = 0, 1, 2, ...``.

    Use the constructors :meth:`explicit`, :meth:`periodic` and
    :meth:`generator`.
    """

    def __init__(self, kind, n, m, steps=(), fn=None, meta=None):
        self.kind = kind
        self.n = n
        self.m = m
        self._steps = tuple(steps)
        self._fn = fn
        self.meta = dict(meta or {})

    @classmethod
    def explicit(cls, steps: Sequence[StepData], meta=None):
        n, m = _common_dims(steps)
        return cls("explicit", n, m, steps, meta=meta)

    @classmethod
    def periodic(cls, steps: Sequence[StepData], meta=None):
        n, m = _common_dims(steps)
        return cls("periodic", n, m, steps, meta=meta)

    @classmethod
    def generator(cls, fn: Callable[[int], StepData], n, m, meta=None):
        """``fn`` must be deterministic and reentrant."""
        return cls("generator", n, m, fn=fn, meta=meta)

    @property
    def dims(self):
        return self.n, self.m

    @property
    def period(self):
        return len(self._steps) if self.kind == "periodic" else None

    @property
    def length(self):
        """Number of available steps (``None`` when unbounded)."""
        return len(self._steps) if self.kind == "explicit" else None

    @property
    def steps(self):
        return self._steps

    def key(self, t):
        """Canonical index of ``t``: steps with equal keys carry identical data."""
        return t % len(self._steps) if self.kind == "periodic" else t

    def step(self, t) -> StepData:
        t = int(t)
        if t < 0:
            raise InputError(f"negative time index {t}")
        if self.kind == "periodic":
            return self._steps[t % len(self._steps)]
        if self.kind == "explicit":
            if t >= len(self._steps):
                raise InputError(f"model data not available at t={t} (explicit model has {len(self._steps)} steps)")
            return self._steps[t]
        s = self._fn(t)
        if not isinstance(s, StepData):
            s = StepData(*s)
        if s.dims != (self.n, self.m):
            raise InputError(f"generator returned dims {s.dims} at t={t}, expected {(self.n, self.m)}")
        return s

    def default_window(self, span=1):
        """Time indices ``t`` over which uniform-in-t quantities are evaluated.

        ``span`` is the number of steps needed from ``t`` onwards. Periodic
        models use exactly one period; explicit models every ``t`` with enough
        data; generators have no default.
        """
        if self.kind == "periodic":
            return range(self.period)
        if self.kind == "explicit":
            return range(max(0, len(self._steps) - span + 1))
        raise InputError("generator models need an explicit window")

    def window_note(self, window):
        w = f"[{window.start}, {window.stop})" if isinstance(window, range) and window.step == 1 else str(list(window))
        if self.kind == "periodic" and isinstance(window, range) and len(window) >= self.period:
            return f"t in {w}: one full period, exact for all t"
        return f"t in {w}: finite-window check only"

    # --- serialization -------------------------------------------------
    def to_dict(self):
        if self.kind == "generator":
            raise InputError("generator models cannot be serialized")
        d = {"n": self.n, "m": self.m, "kind": self.kind, "steps": [s.to_dict() for s in self._steps]}
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InputError("model JSON must be an object")
        kind = d.get("kind")
        if kind not in ("periodic", "explicit"):
            raise InputError(f"model kind must be 'periodic' or 'explicit', got {kind!r}")
        steps = [StepData.from_dict(s) for s in d.get("steps", [])]
        prov = cls.periodic(steps, d.get("meta")) if kind == "periodic" else cls.explicit(steps, d.get("meta"))
        if "n" in d and "m" in d and (d["n"], d["m"]) != prov.dims:
            raise InputError(f"declared dims {(d['n'], d['m'])} do not match step data {prov.dims}")
        return prov

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: malformed JSON ({exc})") from None
        except OSError as exc:
            raise InputError(f"{path}: {exc}") from None
        return cls.from_dict(d)


def _common_dims(steps):
    if not steps:
        raise InputError("model needs at least one step")
    dims = steps[0].dims
    for t, s in enumerate(steps):
        if s.dims != dims:
            raise InputError(f"step {t} has dims {s.dims}, expected {dims}")
    return dims


def transition(provider, t, s):
    """State transition ``A[s-1] ... A[t]`` (identity when ``s == t``)."""
    if s < t:
        raise InputError(f"transition needs s >= t, got t={t}, s={s}")
    Phi = np.eye(provider.n)
    for r in range(t, s):
        Phi = provider.step(r).A @ Phi
    return Phi


def gramians(provider, t, d):
    """Observability and controllability Gramians over ``[t, t+d)``.

    ``obs = sum Phi(s,t)' Q[s] Phi(s,t)`` and
    ``ctr = sum Phi(s,t) B[s] B[s]' Phi(s,t)'``.
    """
    if d < 1:
        raise InputError("d must be >= 1")
    n = provider.n
    obs = np.zeros((n, n))
    ctr = np.zeros((n, n))
    Phi = np.eye(n)
    for s in range(t, t + d):
        st = provider.step(s)
        obs += Phi.T @ st.Q @ Phi
        PB = Phi @ st.B
        ctr += PB @ PB.T
        Phi = st.A @ Phi
    return 0.5 * (obs + obs.T), 0.5 * (ctr + ctr.T)


@dataclass
class GramianReport:
    d: int
    c_obs: float
    c_ctr: float
    window: str
    eps_gram: float
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures and min(self.c_obs, self.c_ctr) > self.eps_gram

    def to_dict(self):
        return {
            "d": self.d,
            "c_obs": self.c_obs,
            "c_ctr": self.c_ctr,
            "window": self.window,
            "eps_gram": self.eps_gram,
            "pass": self.passed,
            "failures": self.failures,
        }


def check_assumptions(provider, d, window=None, eps_gram=1e-9, rcond_min=RCOND_MIN):
    """Check bounded invertible data and uniform observability/controllability.

    Uniformity in ``t`` is evaluated over ``window``; for periodic models the
    default window is one period, which is exact.
    """
    if window is None:
        window = provider.default_window(d)
    c_obs = c_ctr = np.inf
    failures = []
    seen = set()
    for t in window:
        for s in range(t, t + d):
            k = provider.key(s)
            if k in seen:
                continue
            seen.add(k)
            for issue in provider.step(s).issues(rcond_min):
                failures.append(f"t={s}: {issue}")
        obs, ctr = gramians(provider, t, d)
        lo_o = float(np.linalg.eigvalsh(obs)[0])
        lo_c = float(np.linalg.eigvalsh(ctr)[0])
        if lo_o <= eps_gram:
            failures.append(f"t={t}: observability Gramian min eigenvalue {lo_o:.3e} <= {eps_gram:g}")
        if lo_c <= eps_gram:
            failures.append(f"t={t}: controllability Gramian min eigenvalue {lo_c:.3e} <= {eps_gram:g}")
        c_obs = min(c_obs, lo_o)
        c_ctr = min(c_ctr, lo_c)
    return GramianReport(d, float(c_obs), float(c_ctr), provider.window_note(window), eps_gram, failures)


def unicycle_model(a=1.0, N=400, h=0.05, Q=None, R=None):
    """Linearization of the Euler-discretized unicycle along a lemniscate.

    The nominal path is traced once per ``N`` steps. The heading uses the
    four-quadrant arctangent of the nominal displacement, unwrapped so the
    nominal yaw rate stays continuous. The disturbance of the physical model is
    ``h * w``; the returned provider takes the scaled disturbance directly and
    records ``h`` as ``meta["disturbance_scale"]``.
    """
    if N < 3 or h <= 0 or a <= 0:
        raise InputError("unicycle needs N >= 3, h > 0, a > 0")
    Q = np.diag([2.0, 2.0, 0.2]) if Q is None else np.asarray(Q, dtype=float)
    R = np.diag([0.1, 0.01]) if R is None else np.asarray(R, dtype=float)
    k = 2.0 * np.pi / N * (np.arange(N + 1) % N)
    den = 1.0 + np.sin(k) ** 2
    x = a * np.cos(k) / den
    y = a * np.sin(k) * np.cos(k) / den
    dx = np.diff(x)
    dy = np.diff(y)
    bad = np.flatnonzero((dx == 0.0) & (dy == 0.0))
    if bad.size:
        raise InputError(f"degenerate nominal step at t={int(bad[0])}")
    psi = np.unwrap(np.arctan2(dy, dx))
    v = np.hypot(dx, dy) / h
    steps = []
    for t in range(N):
        c, s = np.cos(psi[t]), np.sin(psi[t])
        A = np.array([[1.0, 0.0, -v[t] * s * h], [0.0, 1.0, v[t] * c * h], [0.0, 0.0, 1.0]])
        B = np.array([[c * h, 0.0], [s * h, 0.0], [0.0, h]])
        steps.append(StepData(A, B, Q, R))
    meta = {"example": "unicycle", "a": a, "period": N, "h": h, "disturbance_scale": h}
    return ModelProvider.periodic(steps, meta=meta)


def nominal_lemniscate(a=1.0, N=400, h=0.05):
    """Nominal states ``(x, y, psi)`` and inputs ``(v, r)`` for one period."""
    k = 2.0 * np.pi / N * (np.arange(N + 2) % N)
    den = 1.0 + np.sin(k) ** 2
    x = a * np.cos(k) / den
    y = a * np.sin(k) * np.cos(k) / den
    psi = np.unwrap(np.arctan2(np.diff(y), np.diff(x)))
    v = np.hypot(np.diff(x), np.diff(y))[:N] / h
    r = np.diff(psi)[:N] / h
    return x[:N], y[:N], psi[:N], v, r


def random_periodic_model(rng, n, m, period, q_floor=0.1):
    """Random well-conditioned periodic model, used by the property suites."""
    steps = []
    for _ in range(period):
        U, _ = np.linalg.qr(rng.standard_normal((n, n)))
        A = U @ np.diag(rng.uniform(0.6, 1.4, n))
        B = rng.standard_normal((n, m))
        G = rng.standard_normal((n, n))
        Q = G @ G.T / n + q_floor * np.eye(n)
        H = rng.standard_normal((m, m))
        R = H @ H.T / m + 0.2 * np.eye(m)
        steps.append(StepData(A, B, Q, R))
    return ModelProvider.periodic(steps)
