"""CPMG decay normalization, stretched-exponential envelopes and T2(N) scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .optimize import FitError, levenberg_marquardt

TAIL_POINTS = 10
BASELINE = 0.5
DEFAULT_XI = 4.0


@dataclass(frozen=True)
class DecayTrace:
    """CPMG signal for one pulse number.

    ``points`` holds (total evolution time N*tau in milliseconds, counts).
    """

    n_pulses: int
    points: tuple
    normalized: bool = False

    def __post_init__(self):
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise ValueError(f"n_pulses must be a positive integer, got {self.n_pulses}")
        arr = np.asarray(self.points, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
            raise ValueError("points must be a non-empty list of (time_ms, counts) pairs")
        if not np.all(np.isfinite(arr)):
            raise ValueError("decay trace contains non-finite values")
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise ValueError("total times must be strictly increasing")
        object.__setattr__(self, "n_pulses", int(self.n_pulses))
        object.__setattr__(self, "points", tuple((float(t), float(c)) for t, c in arr))

    @classmethod
    def from_tau(cls, n_pulses: int, taus_ms, counts, normalized: bool = False) -> "DecayTrace":
        """Build a trace from inter-pulse spacings instead of total times."""
        total = np.asarray(taus_ms, dtype=float) * n_pulses
        return cls(n_pulses, tuple(zip(total, counts)), normalized)

    @property
    def times(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def counts(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


@dataclass(frozen=True)
class CoherenceResult:
    n_pulses: int
    t2: float
    amplitude: float
    xi: float
    t2_stderr: float
    residual_rms: float
    reliable: bool = True
    message: str = ""


@dataclass(frozen=True)
class PowerLawResult:
    beta: float
    beta_stderr: float
    prefactor: float


def normalize_decay(trace: DecayTrace) -> DecayTrace:
    """Rescale the counts so that the mean of the last ten points is 0.5.

    The map is a pure scaling. A trace already flagged as normalized is
    returned unchanged, so the operation is idempotent.
    """
    if trace.normalized:
        return trace
    c = trace.counts
    if c.size < TAIL_POINTS:
        raise ValueError(f"normalization needs at least {TAIL_POINTS} points, got {c.size}")
    tail = float(np.mean(c[-TAIL_POINTS:]))
    if tail == 0:
        raise ValueError("mean of the final points is zero; cannot normalize")
    scaled = c * (BASELINE / tail)
    return replace(trace, points=tuple(zip(trace.times, scaled)), normalized=True)


def stretched_exponential(t, t2, amplitude, xi=DEFAULT_XI, offset=BASELINE):
    return amplitude * np.exp(-((np.asarray(t) / t2) ** xi)) + offset


def fit_stretched_exponential(trace: DecayTrace, xi: float = DEFAULT_XI, free_offset: bool = False) -> CoherenceResult:
    """Fit ``A exp(-(t/T2)^xi) + 0.5`` with the stretching factor held fixed.

    With ``free_offset`` the 0.5 baseline is fitted too, which allows raw
    traces to be analysed without normalization. A T2 beyond ten times the
    trace span is flagged as unreliable.
    """
    if not free_offset and not trace.normalized:
        raise ValueError("trace must be normalized first (or pass free_offset=True)")
    if not xi > 0:
        raise ValueError("xi must be positive")
    t, y = trace.times, trace.counts
    span = float(t[-1])
    if not span > 0:
        raise ValueError("trace must extend to positive times")
    offset0 = float(np.mean(y[-min(TAIL_POINTS, y.size):]))
    if not free_offset:
        offset0 = BASELINE
    a0 = float(y[0] - offset0)
    # T2 seed: first time the signal drops below half of its initial contrast
    below = np.nonzero(np.abs(y - offset0) < abs(a0) / 2)[0]
    t_half = float(t[below[0]]) if below.size else span
    t2_0 = max(t_half / math.log(2.0) ** (1.0 / xi), float(t[1] if t.size > 1 else span))

    def unpack(p):
        t2 = math.exp(p[0])
        offset = p[2] if free_offset else BASELINE
        return t2, p[1], offset

    def resid(p):
        t2, amp, offset = unpack(p)
        return stretched_exponential(t, t2, amp, xi, offset) - y

    best = None
    for scale in (1.0, 0.5, 2.0):
        p0 = [math.log(t2_0 * scale), a0] + ([offset0] if free_offset else [])
        try:
            res = levenberg_marquardt(resid, p0, max_iterations=200)
        except FitError:
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError("stretched-exponential fit failed for every start")
    if not best.converged:
        raise FitError(f"stretched-exponential fit did not converge: {best.message}")
    t2, amp, _ = unpack(best.x)
    t2_err = t2 * float(best.stderr()[0])
    reliable = t2 <= 10.0 * span
    message = "" if reliable else f"T2 = {t2:.3g} ms exceeds ten times the trace span ({span:.3g} ms)"
    return CoherenceResult(
        trace.n_pulses, t2, float(amp), float(xi), t2_err,
        float(np.sqrt(np.mean(best.residuals**2))), reliable, message,
    )


def fit_power_law(results) -> PowerLawResult:
    """Ordinary least squares of log T2 on log N.

    ``results`` is a sequence of (N, T2) pairs or :class:`CoherenceResult`.
    Returns the exponent, its standard error and the prefactor of T2 = c N^beta.
    """
    pairs = [(r.n_pulses, r.t2) if isinstance(r, CoherenceResult) else (r[0], r[1]) for r in results]
    n = np.array([p[0] for p in pairs], dtype=float)
    t2 = np.array([p[1] for p in pairs], dtype=float)
    if np.any(n <= 0) or np.any(t2 <= 0):
        raise ValueError("pulse numbers and T2 values must be positive")
    if np.unique(n).size < 3:
        raise ValueError("power-law fit needs at least three distinct pulse numbers")
    x, y = np.log(n), np.log(t2)
    xc = x - x.mean()
    beta = float(xc @ (y - y.mean()) / (xc @ xc))
    intercept = float(y.mean() - beta * x.mean())
    r = y - (intercept + beta * x)
    dof = x.size - 2
    s2 = float(r @ r) / dof if dof > 0 else 0.0
    return PowerLawResult(beta, math.sqrt(s2 / float(xc @ xc)), math.exp(intercept))


def synthetic_decay(
    n_pulses: int,
    t2: float,
    times,
    amplitude: float = 0.5,
    xi: float = DEFAULT_XI,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
    counts_scale: float = 1.0,
) -> DecayTrace:
    """Decay trace from the stretched-exponential model.

    ``noise`` is the Gaussian standard deviation relative to ``amplitude``;
    ``counts_scale`` multiplies the result to mimic raw counts.
    """
    times = np.asarray(times, dtype=float)
    y = stretched_exponential(times, t2, amplitude, xi)
    if noise:
        y = y + (rng or np.random.default_rng(0)).normal(0.0, noise * amplitude, size=y.shape)
    return DecayTrace(n_pulses, tuple(zip(times, y * counts_scale)), normalized=counts_scale == 1.0 and not noise)
