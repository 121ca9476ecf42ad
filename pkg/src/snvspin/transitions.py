"""Spectroscopic observables, analytic limits and field-rotation maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import COIL_GAINS_MT_PER_A, DEFAULT_CONSTANTS, SNV_AXES, PhysicalConstants
from .hamiltonian import FieldSnV, SnVModel, energies_stack

REGIMES = (
    "qubit_parallel_nostrain",
    "allowed_parallel_nostrain",
    "qubit_perpendicular",
    "allowed_perpendicular",
    "qubit_parallel_strained",
)

DEFAULT_THETA_GRID = tuple(float(t) for t in range(0, 360, 2))


@dataclass(frozen=True)
class TransitionObservables:
    """Splittings at one field point (GHz).

    ``allowed_split`` is signed: lower-doublet splitting of the ground manifold
    minus that of the excited manifold.
    """

    qubit: float
    allowed_split: float
    forbidden_split: float


@dataclass(frozen=True)
class RotationMapPoint:
    theta: float
    phi: float
    observables: TransitionObservables


def _default_axes():
    axes = {}
    for label, vec in SNV_AXES.items():
        v = np.asarray(vec, dtype=float)
        axes[label] = tuple(v / np.linalg.norm(v))
    return axes


@dataclass(frozen=True)
class LabFrameCalibration:
    """Coil gains (mT/A along lab X, Y, Z) and emitter axes in the lab frame.

    Axes are normalized on construction; a zero-norm axis is rejected.
    """

    coil_gains: tuple[float, float, float] = COIL_GAINS_MT_PER_A
    snv_axes: dict = field(default_factory=_default_axes)

    def __post_init__(self):
        normalized = {}
        for label, vec in self.snv_axes.items():
            v = np.asarray(vec, dtype=float)
            norm = np.linalg.norm(v)
            if v.shape != (3,) or norm == 0 or not np.isfinite(norm):
                raise ValueError(f"axis of emitter {label!r} must be a finite non-zero 3-vector")
            normalized[label] = tuple(float(x) for x in v / norm)
        object.__setattr__(self, "snv_axes", normalized)
        object.__setattr__(self, "coil_gains", tuple(float(g) for g in self.coil_gains))

    def field_from_currents(self, currents) -> np.ndarray:
        """Lab-frame field in tesla for coil currents in ampere."""
        return np.asarray(currents, dtype=float) * np.asarray(self.coil_gains) * 1e-3


def lower_doublet_splitting(params, b_par, b_perp, constants=DEFAULT_CONSTANTS) -> np.ndarray:
    e = energies_stack(params, b_par, b_perp, constants)
    return e[:, 1] - e[:, 0]


def observables_stack(model: SnVModel, b_par, b_perp, constants=DEFAULT_CONSTANTS):
    """Vectorized observables; returns arrays (qubit, allowed_split, forbidden_split)."""
    dg = lower_doublet_splitting(model.ground, b_par, b_perp, constants)
    du = lower_doublet_splitting(model.excited, b_par, b_perp, constants)
    return dg, dg - du, dg + du


def observables(
    model: SnVModel, field: FieldSnV, constants: PhysicalConstants = DEFAULT_CONSTANTS
) -> TransitionObservables:
    q, a, f = observables_stack(model, field.b_par, field.b_perp, constants)
    return TransitionObservables(float(q[0]), float(a[0]), float(f[0]))


def ground_splitting(lam: float, upsilon: float) -> float:
    """Zero-field gap between the two ground doublets, sqrt(lam^2 + 4 upsilon^2)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not upsilon >= 0:
        raise ValueError("upsilon must be non-negative")
    return math.hypot(lam, 2.0 * upsilon)


def _perp_doublet(lam, alpha, b_perp, gs):
    return 0.5 * (math.hypot(gs * b_perp - 2 * alpha, lam) - math.hypot(gs * b_perp + 2 * alpha, lam))


def closed_form(
    regime: str,
    model: SnVModel,
    field: FieldSnV,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
    atol: float = 1e-12,
) -> float:
    """Analytic splitting in one of the limiting regimes (GHz).

    The perpendicular qubit and strained parallel qubit expressions carry the
    opposite sign of ``observables().qubit``; compare magnitudes for those.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {', '.join(REGIMES)}")
    gl, gs = constants.gamma_l, constants.gamma_s
    g, u = model.ground, model.excited
    scale = max(field.magnitude, 1.0)
    if "parallel" in regime and abs(field.b_perp) > atol * scale:
        raise ValueError(f"regime {regime} requires b_perp = 0, got {field.b_perp} T")
    if "perpendicular" in regime and abs(field.b_par) > atol * scale:
        raise ValueError(f"regime {regime} requires b_par = 0, got {field.b_par} T")
    if regime.endswith("nostrain"):
        strained = [m for m, p in (("ground", g), ("excited", u)) if p.upsilon != 0]
        if regime.startswith("qubit"):
            strained = [m for m in strained if m == "ground"]
        if strained:
            raise ValueError(f"regime {regime} requires zero strain in the {' and '.join(strained)} manifold")

    b_par, b_perp = field.b_par, field.b_perp
    if regime == "qubit_parallel_nostrain":
        return b_par * (2 * g.f_32 * gl + gs)
    if regime == "allowed_parallel_nostrain":
        return 2 * b_par * (g.f_32 - u.f_32) * gl
    if regime == "qubit_perpendicular":
        return _perp_doublet(g.lam, g.upsilon, b_perp, gs)
    if regime == "allowed_perpendicular":
        return _perp_doublet(g.lam, g.upsilon, b_perp, gs) * -1 + _perp_doublet(u.lam, u.upsilon, b_perp, gs)
    # qubit_parallel_strained
    fs = g.f_12 + g.f_32
    return 0.5 * (
        math.hypot(g.lam - gl * b_par * fs, 2 * g.upsilon)
        - math.hypot(g.lam + gl * b_par * fs, 2 * g.upsilon)
        + 2 * gl * b_par * (g.f_12 - g.f_32)
        - 2 * b_par * gs
    )


def field_in_snv_frame(
    calibration: LabFrameCalibration,
    emitter: str,
    b_lab=None,
    coil_currents=None,
) -> FieldSnV:
    """Project a lab-frame field (T), or coil currents (A), onto an emitter's axis.

    The azimuth is measured from the transverse projection of lab X (lab Z if
    the axis is along X).
    """
    if (b_lab is None) == (coil_currents is None):
        raise ValueError("give exactly one of b_lab or coil_currents")
    if emitter not in calibration.snv_axes:
        raise KeyError(f"unknown emitter {emitter!r}; known: {', '.join(sorted(calibration.snv_axes))}")
    axis = np.asarray(calibration.snv_axes[emitter])
    b = calibration.field_from_currents(coil_currents) if b_lab is None else np.asarray(b_lab, dtype=float)
    b_par = float(b @ axis)
    transverse = b - b_par * axis
    b_perp = float(np.linalg.norm(transverse))

    ref = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    ex = ref - (ref @ axis) * axis
    ex /= np.linalg.norm(ex)
    ey = np.cross(axis, ex)
    phi = math.degrees(math.atan2(transverse @ ey, transverse @ ex)) % 360.0 if b_perp > 0 else 0.0
    return FieldSnV.from_components(b_par, b_perp, phi)


def sweep_fields(model: SnVModel, plane: str, theta_grid, magnitude: float | None = None):
    """Field components (b_par, b_perp) along a rotation sweep.

    With ``magnitude=None`` the model's calibrated parallel/perpendicular field
    magnitudes are used. In the yz plane the true polar angle is the nominal
    grid angle minus ``model.delta_theta``; in the xy plane the field stays
    perpendicular to the quantization axis.
    """
    theta = np.asarray(theta_grid, dtype=float)
    if magnitude is None:
        if model.b_parallel_cal is None or model.b_perp_cal is None:
            raise ValueError("model has no calibrated field; pass magnitude")
        m_par, m_perp = model.b_parallel_cal, model.b_perp_cal
    else:
        m_par = m_perp = magnitude
    if plane == "yz":
        t = np.radians(theta - model.delta_theta)
        return m_par * np.cos(t), m_perp * np.abs(np.sin(t))
    if plane == "xy":
        return np.zeros_like(theta), np.full_like(theta, m_perp)
    raise ValueError(f"unknown plane {plane!r}; expected 'xy' or 'yz'")


def rotation_map(
    model: SnVModel,
    magnitude: float | None,
    plane: str = "yz",
    theta_grid=DEFAULT_THETA_GRID,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> list[RotationMapPoint]:
    """Observables along a field rotation, one point per grid angle (degrees)."""
    if magnitude is not None and not magnitude > 0:
        raise ValueError("magnitude must be positive")
    grid = [float(t) for t in theta_grid]
    if not grid:
        raise ValueError("theta grid is empty")
    b_par, b_perp = sweep_fields(model, plane, grid, magnitude)
    q, a, f = observables_stack(model, b_par, b_perp, constants)
    points = []
    for i, t in enumerate(grid):
        obs = TransitionObservables(float(q[i]), float(a[i]), float(f[i]))
        if plane == "yz":
            points.append(RotationMapPoint(t % 360.0, 90.0, obs))
        else:
            points.append(RotationMapPoint(90.0, t % 360.0, obs))
    return points
