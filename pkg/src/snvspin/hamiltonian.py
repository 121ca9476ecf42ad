"""Effective 4x4 electron-spin Hamiltonian of one SnV manifold.

The working basis is the product of the two E orbitals {e_x, e_y} with the
electron spin {up, down} (orbital index major). The spin-orbit eigenbasis is
reached with the unitary :data:`T_XY_TO_SO`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import DEFAULT_CONSTANTS, LAMBDA_EXCITED, PhysicalConstants

# Columns are the spin-orbit eigenvectors expressed in the {xy} basis.
T_XY_TO_SO = np.array(
    [
        [1j, 0, -1j, 0],
        [0, -1j, 0, 1j],
        [1, 0, 1, 0],
        [0, 1, 0, 1],
    ],
    dtype=complex,
) / math.sqrt(2.0)

L_Z = np.array([[0, 1j], [-1j, 0]])
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class ManifoldParams:
    """Parameters of the ground or excited manifold.

    Attributes
    ----------
    lam : float
        Spin-orbit splitting (GHz).
    f_12, f_32 : float
        Orbital quenching factors of the m_j = 1/2 and m_j = 3/2 doublets.
    upsilon : float
        Strain magnitude (GHz), the alpha of the strain term.
    """

    lam: float
    f_12: float = 0.3
    f_32: float = 0.3
    upsilon: float = 0.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"spin-orbit splitting must be >= 0, got {self.lam}")
        if self.lam == 0:
            warnings.warn("lambda = 0: doublet labels are not meaningful", RuntimeWarning, stacklevel=3)
        if not self.upsilon >= 0:
            raise ValueError(f"strain must be >= 0, got {self.upsilon}")
        for name in ("f_12", "f_32"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class SnVModel:
    """Full parameter set of one emitter.

    ``b_parallel_cal`` and ``b_perp_cal`` are the calibrated field magnitudes (T)
    for parallel and perpendicular orientation; ``None`` means "use the nominal
    magnitude of the measurement". ``delta_theta`` is the polar misalignment of
    the rotation plane in degrees.
    """

    ground: ManifoldParams
    excited: ManifoldParams = field(default_factory=lambda: ManifoldParams(LAMBDA_EXCITED))
    b_parallel_cal: float | None = None
    b_perp_cal: float | None = None
    delta_theta: float = 0.0
    emitter: str = ""

    def __post_init__(self):
        if abs(self.delta_theta) >= 5.0:
            raise ValueError(f"|delta_theta| must be below 5 deg, got {self.delta_theta}")

    def with_params(self, **changes) -> "SnVModel":
        """Return a copy with flat parameter names replaced.

        Accepts ``lambda_g``, ``upsilon_g``, ``upsilon_u``, ``f32_g``, ``f32_u``,
        ``f12_g``, ``f12_u`` as well as any dataclass field of the model.
        """
        ground, excited, rest = {}, {}, {}
        for key, value in changes.items():
            if key == "lambda_g":
                ground["lam"] = value
            elif key == "lambda_u":
                excited["lam"] = value
            elif key in ("upsilon_g", "upsilon_u"):
                (ground if key.endswith("_g") else excited)["upsilon"] = value
            elif key[:3] in ("f32", "f12"):
                (ground if key.endswith("_g") else excited)["f_" + key[1:3]] = value
            else:
                rest[key] = value
        return replace(
            self,
            ground=replace(self.ground, **ground) if ground else self.ground,
            excited=replace(self.excited, **excited) if excited else self.excited,
            **rest,
        )

    def get_param(self, name: str) -> float:
        if name == "delta_theta":
            return self.delta_theta
        manifold = self.ground if name.endswith("_g") else self.excited
        base = name[:-2]
        if base == "lambda":
            return manifold.lam
        if base == "upsilon":
            return manifold.upsilon
        return getattr(manifold, "f_" + base[1:])


@dataclass(frozen=True)
class FieldSnV:
    """Magnetic field in the defect frame.

    Only ``b_par`` and ``b_perp`` enter the Hamiltonian; ``theta``/``phi``
    (degrees) and ``magnitude`` are kept for sweep bookkeeping.
    """

    b_par: float
    b_perp: float
    theta: float
    phi: float
    magnitude: float

    @classmethod
    def from_angles(cls, magnitude: float, theta: float, phi: float = 0.0) -> "FieldSnV":
        """Field of given magnitude at polar angle ``theta`` (degrees).

        Angles outside [0, 180] are folded so that ``b_perp`` stays non-negative.
        """
        t = math.radians(theta)
        b_par = magnitude * math.cos(t)
        b_perp = abs(magnitude * math.sin(t))
        return cls.from_components(b_par, b_perp, phi)

    @classmethod
    def from_components(cls, b_par: float, b_perp: float, phi: float = 0.0) -> "FieldSnV":
        if b_perp < 0:
            raise ValueError("b_perp must be non-negative")
        magnitude = math.hypot(b_par, b_perp)
        theta = math.degrees(math.atan2(b_perp, b_par))
        return cls(float(b_par), float(b_perp), theta, float(phi), magnitude)

    @classmethod
    def zero(cls) -> "FieldSnV":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class LevelEnergies:
    energies: tuple[float, float, float, float]

    def splitting(self, i: int = 0, j: int = 1) -> float:
        return self.energies[j] - self.energies[i]


def is_hermitian(matrix: np.ndarray, atol: float = 1e-12) -> bool:
    return bool(np.allclose(matrix, np.conj(np.swapaxes(matrix, -1, -2)), rtol=0.0, atol=atol))


def build_component_matrices(
    params: ManifoldParams, field: FieldSnV, constants: PhysicalConstants = DEFAULT_CONSTANTS
) -> dict[str, np.ndarray]:
    """The four Hamiltonian terms in the {xy} basis plus the basis change ``T``.

    Returns a dict with keys ``H_so_xy``, ``H_Ze_spin_xy``, ``H_ZL_orbital_xy``,
    ``H_strain_xy`` and ``T``.
    """
    lam, f12, f32, alpha = params.lam, params.f_12, params.f_32, params.upsilon
    b_par, b_perp = field.b_par, field.b_perp
    gl, gs = constants.gamma_l, constants.gamma_s

    h_so = -lam * np.kron(L_Z, SIGMA_Z / 2)
    h_ze = gs / 2 * np.kron(ID2, b_par * SIGMA_Z + b_perp * SIGMA_X)
    a = f32 - f12
    s = 1j * (f12 + f32)
    h_zl = gl * b_par / 2 * np.array(
        [
            [a, 0, s, 0],
            [0, -a, 0, s],
            [-s, 0, a, 0],
            [0, -s, 0, -a],
        ],
        dtype=complex,
    )
    h_strain = alpha * np.kron(SIGMA_Z, ID2)
    return {
        "H_so_xy": h_so.astype(complex),
        "H_Ze_spin_xy": h_ze,
        "H_ZL_orbital_xy": h_zl,
        "H_strain_xy": h_strain.astype(complex),
        "T": T_XY_TO_SO.copy(),
    }


def hamiltonian_xy_stack(
    lam: float,
    f12: float,
    f32: float,
    alpha: float,
    b_par,
    b_perp,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Full {xy}-basis Hamiltonian for arrays of field components, shape (n, 4, 4)."""
    b_par = np.atleast_1d(np.asarray(b_par, dtype=float))
    b_perp = np.atleast_1d(np.asarray(b_perp, dtype=float))
    b_par, b_perp = np.broadcast_arrays(b_par, b_perp)
    gl, gs = constants.gamma_l, constants.gamma_s
    n = b_par.shape[0]
    h = np.zeros((n, 4, 4), dtype=complex)
    d_plus = (gl * (f32 - f12) + gs) * b_par / 2
    d_minus = (gl * (f12 - f32) - gs) * b_par / 2
    h[:, 0, 0] = d_plus + alpha
    h[:, 1, 1] = d_minus + alpha
    h[:, 2, 2] = d_plus - alpha
    h[:, 3, 3] = d_minus - alpha
    h[:, 0, 1] = h[:, 1, 0] = h[:, 2, 3] = h[:, 3, 2] = gs * b_perp / 2
    orb = 1j * gl * (f12 + f32) * b_par / 2
    h[:, 0, 2] = orb - 0.5j * lam
    h[:, 1, 3] = orb + 0.5j * lam
    h[:, 2, 0] = np.conj(h[:, 0, 2])
    h[:, 3, 1] = np.conj(h[:, 1, 3])
    return h


def hamiltonian_so(
    params: ManifoldParams, field: FieldSnV, constants: PhysicalConstants = DEFAULT_CONSTANTS
) -> np.ndarray:
    """Full Hamiltonian written out directly in the spin-orbit eigenbasis."""
    lam, f12, f32, alpha = params.lam, params.f_12, params.f_32, params.upsilon
    bp, bt = field.b_par, field.b_perp
    gl, gs = constants.gamma_l, constants.gamma_s
    return 0.5 * np.array(
        [
            [(2 * f32 * gl + gs) * bp - lam, 0, -2 * alpha, gs * bt],
            [0, (-2 * f32 * gl - gs) * bp - lam, gs * bt, -2 * alpha],
            [-2 * alpha, gs * bt, (-2 * f12 * gl + gs) * bp + lam, 0],
            [gs * bt, -2 * alpha, 0, (2 * f12 * gl - gs) * bp + lam],
        ],
        dtype=complex,
    )


def build_full_hamiltonian(
    params: ManifoldParams,
    field: FieldSnV,
    basis: str = "xy",
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    if basis == "xy":
        return hamiltonian_xy_stack(
            params.lam, params.f_12, params.f_32, params.upsilon, field.b_par, field.b_perp, constants
        )[0]
    if basis == "so":
        return hamiltonian_so(params, field, constants)
    raise ValueError(f"unknown basis {basis!r}; expected 'xy' or 'so'")


def hamiltonian_so_stack(
    lam: float,
    f12: float,
    f32: float,
    alpha: float,
    b_par,
    b_perp,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Spin-orbit-basis Hamiltonian for arrays of field components, shape (n, 4, 4).

    This form is real symmetric, which makes batched diagonalization cheaper.
    """
    b_par = np.atleast_1d(np.asarray(b_par, dtype=float))
    b_perp = np.atleast_1d(np.asarray(b_perp, dtype=float))
    b_par, b_perp = np.broadcast_arrays(b_par, b_perp)
    gl, gs = constants.gamma_l, constants.gamma_s
    h = np.zeros((b_par.shape[0], 4, 4))
    h[:, 0, 0] = ((2 * f32 * gl + gs) * b_par - lam) / 2
    h[:, 1, 1] = ((-2 * f32 * gl - gs) * b_par - lam) / 2
    h[:, 2, 2] = ((-2 * f12 * gl + gs) * b_par + lam) / 2
    h[:, 3, 3] = ((2 * f12 * gl - gs) * b_par + lam) / 2
    h[:, 0, 2] = h[:, 2, 0] = h[:, 1, 3] = h[:, 3, 1] = -alpha
    h[:, 0, 3] = h[:, 3, 0] = h[:, 1, 2] = h[:, 2, 1] = gs * b_perp / 2
    return h


def energies_stack(params: ManifoldParams, b_par, b_perp, constants=DEFAULT_CONSTANTS) -> np.ndarray:
    """Sorted eigenvalues for arrays of field components, shape (n, 4)."""
    h = hamiltonian_so_stack(params.lam, params.f_12, params.f_32, params.upsilon, b_par, b_perp, constants)
    return np.linalg.eigvalsh(h)


def manifold_energies(
    params: ManifoldParams, field: FieldSnV, constants: PhysicalConstants = DEFAULT_CONSTANTS
) -> LevelEnergies:
    """Sorted eigenvalues of the {xy}-basis Hamiltonian."""
    e = np.linalg.eigvalsh(build_full_hamiltonian(params, field, "xy", constants))
    return LevelEnergies(tuple(float(x) for x in e))
