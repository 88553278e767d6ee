"""Finite-preview approximant, receding-horizon gain schedule and streaming controller.

At time ``t`` the controller looks ``d*(T+1)`` steps ahead. The blocks
``k = 0..T`` of base ``t+1`` are lifted; block ``T`` supplies the terminal
matrix and blocks ``T-1, ..., 0`` are applied to it with the lifted Riccati map,
giving ``X[t+1]``. The gain is then ``K = K_{gamma+beta,t}(X[t+1])``.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._parallel import pmap
from .errors import FeasibilityError, InputError, PreviewExhaustedError, PreviewGainError
from .lifting import lifted_riccati, terminal_bound, transformed_block
from .model import StepData
from .riccati import feedback_gain
from .spd import eig_bounds, riemannian_distance


def _block(provider, start, d, gamma, cache):
    return cache(start) if cache is not None else transformed_block(provider, start, d, gamma)


def terminal_matrix(provider, t, d, T, gamma, cache=None):
    """``X~[t+1]``: the terminal bound of block ``T`` of base ``t+1``."""
    start = t + 1 + d * T
    try:
        return terminal_bound(_block(provider, start, d, gamma, cache))
    except FeasibilityError as exc:
        raise FeasibilityError(f"terminal block infeasible at (t={t}, k={T}): {exc}") from None


def approximant(provider, t, d, T, gamma, cache=None, trace=False):
    """``X[t+1]`` from ``T`` lifted Riccati applications to the terminal matrix.

    Blocks are applied in the order ``k = T-1, ..., 0``; every intermediate
    iterate is checked for definiteness so an infeasible block is reported
    by ``(t, k)``. With ``trace=True`` the list of iterates (terminal first)
    is returned alongside.
    """
    if T < 0 or d < 1:
        raise InputError("need T >= 0 and d >= 1")
    X = terminal_matrix(provider, t, d, T, gamma, cache)
    iterates = [X]
    for k in range(T - 1, -1, -1):
        try:
            X = lifted_riccati(_block(provider, t + 1 + d * k, d, gamma, cache), X)
        except PreviewGainError as exc:
            raise FeasibilityError(f"lifted Riccati step infeasible at (t={t}, k={k}): {exc}") from None
        lo, hi = eig_bounds(X)
        if not lo > 0:
            raise FeasibilityError(f"approximant lost definiteness at (t={t}, k={k}) (min eigenvalue {lo:.3e})")
        iterates.append(X)
    return (X, iterates) if trace else X


@dataclass(frozen=True)
class ScheduleEntry:
    t: int
    K: np.ndarray
    X: np.ndarray
    lambda_min_X: float
    margin: float
    delta: float | None = None
    advisory: bool = False


def _entry(step, t, X, alpha, P_next, advisory, eps):
    lo, hi = eig_bounds(X)
    margin = alpha**2 - hi
    if not margin > eps:
        raise FeasibilityError(
            f"X[t+1] is not below (gamma+beta)^2 I with margin at t={t}: margin {margin:.6g}"
        )
    K = feedback_gain(step, alpha, X)
    delta = None if P_next is None else riemannian_distance(X, P_next)
    return ScheduleEntry(t, K, X, lo, margin, delta, advisory)


def gain_schedule(provider, ts, d, T, gamma, beta, baseline=None, certificate=None, cache=None,
                  epsilon=1e-9, threads=None):
    """Finite-preview gains ``K[t]`` for every ``t`` in ``ts``.

    ``baseline`` (a periodic Riccati solution) adds ``delta(X[t+1], P[t+1])``
    to the diagnostics. When ``certificate`` is given and ``T`` is below its
    ``T_chosen`` the entries are flagged advisory.
    """
    alpha = gamma + beta
    advisory = _is_advisory(T, certificate)

    def one(t):
        X = approximant(provider, t, d, T, gamma, cache)
        P_next = None if baseline is None else baseline.at(t + 1)
        return _entry(provider.step(t), t, X, alpha, P_next, advisory, epsilon)

    return pmap(one, list(ts), threads)


def _is_advisory(T, certificate):
    if certificate is None:
        return False
    return certificate.T_chosen is None or T < certificate.T_chosen


def write_schedule_csv(path_or_fh, entries, header=None):
    """CSV with ``t``, row-major ``K`` entries, ``lambda_min_X``, ``margin``, ``delta_to_baseline``."""
    own = isinstance(path_or_fh, str)
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        if header:
            for line in header:
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        if entries:
            m, n = entries[0].K.shape
            w.writerow(["t"] + [f"K_{i}_{j}" for i in range(m) for j in range(n)]
                       + ["lambda_min_X", "margin", "delta_to_baseline"])
        for e in entries:
            w.writerow([e.t] + [repr(float(v)) for v in e.K.ravel()]
                       + [repr(e.lambda_min_X), repr(e.margin), "" if e.delta is None else repr(e.delta)])
    finally:
        if own:
            fh.close()


# --- streaming -----------------------------------------------------------

@dataclass
class PreviewBuffer:
    """Model data at ``t`` plus the ``d*(T+1)`` steps after it."""

    t: int
    current: StepData
    ahead: list
    d: int
    T: int

    def __post_init__(self):
        self.ahead = list(self.ahead)
        if len(self.ahead) != self.required:
            raise InputError(f"preview buffer needs exactly {self.required} steps ahead of t, got {len(self.ahead)}")
        dims = self.current.dims
        for i, s in enumerate(self.ahead):
            if s.dims != dims:
                raise InputError(f"preview step t={self.t + 1 + i} has dims {s.dims}, expected {dims}")

    @property
    def required(self):
        return self.d * (self.T + 1)

    @classmethod
    def from_provider(cls, provider, t, d, T):
        return cls(t, provider.step(t), [provider.step(t + 1 + i) for i in range(d * (T + 1))], d, T)


class _BufferView:
    """Presents buffered steps under their absolute time indices."""

    def __init__(self, t, current, ahead):
        self._t = t
        self._steps = [current, *ahead]
        self.dims = current.dims

    def step(self, s):
        i = s - self._t
        if not 0 <= i < len(self._steps):
            raise PreviewExhaustedError(f"model data for t={s} is outside the preview buffer")
        return self._steps[i]


@dataclass
class ControllerState:
    t: int
    K: np.ndarray
    X: np.ndarray
    certificate: object = field(default=None, repr=False)


class StreamingController:
    """Receding-horizon controller fed one model step at a time.

    ``push`` queues a future step; ``advance`` moves the window forward by one
    step using the oldest queued step and recomputes ``X[t+1]`` and ``K[t]``
    from scratch. When nothing is queued the controller reports the
    ``"preview exhausted"`` status and keeps its current gain. Not safe for
    concurrent mutation.
    """

    READY = "ready"
    EXHAUSTED = "preview exhausted"

    def __init__(self, buffer, gamma, beta, certificate=None, epsilon=1e-9):
        self.gamma = float(gamma)
        self.beta = float(beta)
        self.certificate = certificate
        self.epsilon = epsilon
        self._t = buffer.t
        self._current = buffer.current
        self._ahead = deque(buffer.ahead)
        self._pending = deque()
        self.d = buffer.d
        self.T = buffer.T
        self.status = self.READY
        self._recompute()

    @classmethod
    def from_certificate(cls, certificate, buffer):
        if certificate.T_chosen is None:
            raise FeasibilityError("certificate is infeasible: " + "; ".join(certificate.reasons))
        if buffer.d != certificate.d:
            raise InputError(f"buffer d={buffer.d} does not match certificate d={certificate.d}")
        return cls(buffer, certificate.gamma, certificate.beta, certificate)

    @property
    def dims(self):
        return self._current.dims

    @property
    def t(self):
        return self._t

    @property
    def advisory(self):
        return _is_advisory(self.T, self.certificate)

    def _recompute(self):
        view = _BufferView(self._t, self._current, self._ahead)
        X = approximant(view, self._t, self.d, self.T, self.gamma)
        e = _entry(self._current, self._t, X, self.gamma + self.beta, None, self.advisory, self.epsilon)
        self._entry = e

    @property
    def state(self):
        return ControllerState(self._t, self._entry.K, self._entry.X, self.certificate)

    @property
    def entry(self):
        return self._entry

    def gain(self):
        return self._entry.K

    def control(self, x):
        return -self._entry.K @ np.asarray(x, dtype=float)

    def push(self, step):
        if not isinstance(step, StepData):
            raise InputError("push expects StepData")
        if step.dims != self.dims:
            raise InputError(f"pushed step has dims {step.dims}, expected {self.dims}")
        self._pending.append(step)
        if self.status == self.EXHAUSTED:
            self.status = self.READY

    def advance(self, step=None):
        """Shift to ``t+1`` and return the new gain."""
        if step is not None:
            self.push(step)
        if not self._pending:
            self.status = self.EXHAUSTED
            raise PreviewExhaustedError(f"preview exhausted at t={self._t}: no model data for t={self._t + len(self._ahead) + 1}")
        old = (self._t, self._current, self._ahead.copy(), self._entry)
        nxt = self._pending.popleft()
        self._current = self._ahead.popleft()
        self._ahead.append(nxt)
        self._t += 1
        try:
            self._recompute()
        except PreviewGainError:
            self._t, self._current, self._ahead, self._entry = old
            self._pending.appendleft(nxt)
            raise
        return self._entry.K

    # --- snapshot ----------------------------------------------------------
    def to_dict(self):
        return {
            "t": self._t, "d": self.d, "T": self.T, "gamma": self.gamma, "beta": self.beta,
            "epsilon": self.epsilon, "status": self.status,
            "current": self._current.to_dict(),
            "ahead": [s.to_dict() for s in self._ahead],
            "pending": [s.to_dict() for s in self._pending],
            "K": self._entry.K.tolist(),
            "X": self._entry.X.tolist(),
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        buf = PreviewBuffer(d["t"], StepData.from_dict(d["current"]),
                            [StepData.from_dict(s) for s in d["ahead"]], d["d"], d["T"])
        ctl = cls(buf, d["gamma"], d["beta"], None, d.get("epsilon", 1e-9))
        cert = d.get("certificate")
        if cert is not None:
            ctl.certificate = _CertificateRecord(cert)
        for s in d.get("pending", []):
            ctl._pending.append(StepData.from_dict(s))
        ctl.status = d.get("status", cls.READY)
        return ctl

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


class _CertificateRecord:
    """Read-only view of a serialized certificate restored with a controller snapshot."""

    def __init__(self, d):
        self._d = dict(d)
        self.T_chosen = d.get("T_chosen")
        self.d = d.get("d")
        self.gamma = d.get("gamma")
        self.beta = d.get("beta")

    def to_dict(self):
        return dict(self._d)


def stream_schedule(provider, t0, t1, d, T, gamma, beta, certificate=None):
    """Run the streaming controller over ``[t0, t1)`` feeding steps from ``provider``."""
    ctl = StreamingController(PreviewBuffer.from_provider(provider, t0, d, T), gamma, beta, certificate)
    out = [ctl.entry]
    for t in range(t0 + 1, t1):
        ctl.advance(provider.step(t + d * (T + 1)))
        out.append(ctl.entry)
    return out


def lqr_like_gain(step, X):
    """Gain with the disturbance weighting removed (``alpha = inf``), for comparison."""
    return feedback_gain(step, math.inf, X)
