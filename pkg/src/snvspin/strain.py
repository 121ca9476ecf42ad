"""Projection of lab-frame strain tensors onto SnV defect frames.

The lab frame has its x and y axes along the <110> edges of the membrane and
z along [001]. A defect frame is reached with ``R eps R^T`` where
``R = Rz(theta) Ry(phi) Rz(psi)``; ``Rz(psi) Ry(phi)`` carries the defect's
<111> axis onto z and ``Rz(theta)`` fixes the transverse axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s
ZPL_WAVELENGTH_NM = 619.0

_S2 = math.sqrt(2.0)
_S3 = math.sqrt(3.0)

# <111> axes expressed in the lab frame (x = [110]/sqrt2, y = [-110]/sqrt2, z = [001])
ORIENTATIONS = {
    "[111]": (_S2 / _S3, 0.0, 1.0 / _S3),
    "[1-1-1]": (0.0, -_S2 / _S3, -1.0 / _S3),
    "[-11-1]": (0.0, _S2 / _S3, -1.0 / _S3),
    "[-1-11]": (-_S2 / _S3, 0.0, 1.0 / _S3),
}
DEFAULT_THETA = 90.0
DEFAULT_PHI = 54.0


@dataclass(frozen=True)
class StrainTensor:
    """Symmetric strain tensor stored as its six independent components."""

    xx: float = 0.0
    yy: float = 0.0
    zz: float = 0.0
    xy: float = 0.0
    yz: float = 0.0
    zx: float = 0.0

    def __post_init__(self):
        for name in ("xx", "yy", "zz", "xy", "yz", "zx"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"strain component eps_{name} is not finite")

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.xx, self.xy, self.zx],
                [self.xy, self.yy, self.yz],
                [self.zx, self.yz, self.zz],
            ]
        )

    @classmethod
    def from_matrix(cls, m) -> "StrainTensor":
        m = np.asarray(m, dtype=float)
        s = 0.5 * (m + m.T)
        return cls(s[0, 0], s[1, 1], s[2, 2], s[0, 1], s[1, 2], s[2, 0])

    @property
    def trace(self) -> float:
        return self.xx + self.yy + self.zz


@dataclass(frozen=True)
class StrainSusceptibilities:
    """Strain-to-energy coefficients in GHz per unit strain."""

    d: float = 0.8e6
    f: float = -0.56e6
    t_par: float = -1.7e6
    t_perp: float = 0.078e6


@dataclass(frozen=True)
class SymmetryComponents:
    """Strain energies (GHz) in the A1 and E symmetry channels."""

    eps_A1: float
    eps_Ex: float
    eps_Ey: float


DEFAULT_SUSCEPTIBILITIES = StrainSusceptibilities()


def rot_y(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_strain(eps_lab: StrainTensor, theta: float = DEFAULT_THETA, phi: float = DEFAULT_PHI) -> StrainTensor:
    """``Rz(theta) Ry(phi) eps Ry(phi)^T Rz(theta)^T`` with angles in degrees."""
    r = rot_z(theta) @ rot_y(phi)
    return StrainTensor.from_matrix(r @ eps_lab.matrix() @ r.T)


def frame_for_axis(axis, theta: float = DEFAULT_THETA) -> np.ndarray:
    """Rotation whose rows are the defect x, y, z axes in lab coordinates.

    For an axis with polar angle ``a`` and azimuth ``b`` this is
    ``Rz(theta) Ry(a) Rz(180 - b)``, so ``frame @ axis`` is the unit z vector.
    """
    n = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(n)
    if n.shape != (3,) or not norm > 0:
        raise ValueError("axis must be a non-zero 3-vector")
    n = n / norm
    polar = math.degrees(math.acos(max(-1.0, min(1.0, n[2]))))
    azimuth = math.degrees(math.atan2(n[1], n[0]))
    return rot_z(theta) @ rot_y(polar) @ rot_z(180.0 - azimuth)


def orientation_frame(orientation, theta: float = DEFAULT_THETA) -> np.ndarray:
    """Defect frame for a <111> label or an explicit 3x3 rotation matrix."""
    if isinstance(orientation, str):
        if orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {orientation!r}; expected one of {', '.join(ORIENTATIONS)}")
        return frame_for_axis(ORIENTATIONS[orientation], theta)
    frame = np.asarray(orientation, dtype=float)
    if frame.shape != (3, 3) or not np.allclose(frame @ frame.T, np.eye(3), atol=1e-9):
        raise ValueError("orientation frame must be a 3x3 rotation matrix")
    return frame


def to_defect_frame(eps_lab: StrainTensor, orientation, theta: float = DEFAULT_THETA) -> StrainTensor:
    r = orientation_frame(orientation, theta)
    return StrainTensor.from_matrix(r @ eps_lab.matrix() @ r.T)


def symmetry_components(
    eps: StrainTensor, chi: StrainSusceptibilities = DEFAULT_SUSCEPTIBILITIES
) -> SymmetryComponents:
    """A1 and E strain energies of a tensor given in the defect frame."""
    a1 = chi.t_perp * (eps.xx + eps.yy) + chi.t_par * eps.zz
    ex = chi.d * (eps.xx - eps.yy) + chi.f * eps.zx
    ey = -2.0 * chi.d * eps.xy - chi.f * eps.yz
    return SymmetryComponents(float(a1), float(ex), float(ey))


def strain_hamiltonian(comp: SymmetryComponents) -> np.ndarray:
    """Orbital strain matrix tensored with the spin identity (4x4, GHz)."""
    orbital = np.array(
        [
            [comp.eps_A1 - comp.eps_Ex, comp.eps_Ey],
            [comp.eps_Ey, comp.eps_A1 + comp.eps_Ex],
        ]
    )
    return np.kron(orbital, np.eye(2))


def splitting_and_zpl(
    eps_lab: StrainTensor,
    orientation,
    chi: StrainSusceptibilities = DEFAULT_SUSCEPTIBILITIES,
    theta: float = DEFAULT_THETA,
) -> tuple[float, float]:
    """Ground-state splitting and ZPL shift (GHz) of one defect orientation.

    ``orientation`` is a <111> label from :data:`ORIENTATIONS` or a 3x3 frame.
    The splitting is the gap between the two spin-degenerate eigenvalue
    pairs of the strain Hamiltonian; the ZPL shift is the A1 component.
    """
    comp = symmetry_components(to_defect_frame(eps_lab, orientation, theta), chi)
    e = np.linalg.eigvalsh(strain_hamiltonian(comp))
    return float(max(e[2] - e[1], 0.0)), comp.eps_A1


def analytic_splitting(comp: SymmetryComponents) -> float:
    return 2.0 * math.hypot(comp.eps_Ex, comp.eps_Ey)


@dataclass(frozen=True)
class StrainMapRow:
    x_um: float
    y_um: float
    orientation: str
    gs_splitting: float
    zpl_shift: float


def strain_map(
    grid, chi: StrainSusceptibilities = DEFAULT_SUSCEPTIBILITIES, theta: float = DEFAULT_THETA
) -> list[StrainMapRow]:
    """Splitting and ZPL shift at every grid point for all four orientations.

    ``grid`` is a sequence of (x_um, y_um, StrainTensor). Rows come out in
    grid order, orientations in the order of :data:`ORIENTATIONS`.
    """
    rows = []
    for i, item in enumerate(grid):
        try:
            x, y, eps = item
        except (TypeError, ValueError) as exc:
            raise ValueError(f"grid row {i}: expected (x_um, y_um, StrainTensor)") from exc
        if not isinstance(eps, StrainTensor):
            raise ValueError(f"grid row {i}: third entry must be a StrainTensor")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError(f"grid row {i}: coordinates must be finite")
        for label in ORIENTATIONS:
            gs, zpl = splitting_and_zpl(eps, label, chi, theta)
            rows.append(StrainMapRow(float(x), float(y), label, gs, zpl))
    if not rows:
        raise ValueError("strain grid is empty")
    return rows


def ghz_to_nm(shift_ghz, wavelength_nm: float = ZPL_WAVELENGTH_NM):
    """Wavelength change (nm) for an optical frequency change (GHz).

    A positive frequency shift gives a negative wavelength shift.
    """
    nu_ghz = SPEED_OF_LIGHT / (wavelength_nm * 1e-9) * 1e-9
    return -np.asarray(shift_ghz, dtype=float) * wavelength_nm / nu_ghz
