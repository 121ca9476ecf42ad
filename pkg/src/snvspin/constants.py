"""Physical constants and the reference parameter sets of the four emitters.

Energies are in GHz, fields in tesla and angles in degrees unless a name
says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    """Gyromagnetic ratios used throughout a computation run.

    ``gamma_l`` and ``gamma_s`` are in GHz/T, ``gamma_c13`` in MHz/T.
    """

    gamma_l: float = 14.0
    gamma_s: float = 28.0
    gamma_c13: float = 10.7084

    def __post_init__(self):
        for name in ("gamma_l", "gamma_s", "gamma_c13"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value!r}")


DEFAULT_CONSTANTS = PhysicalConstants()

#: Excited-state spin-orbit splitting, held fixed in every fit (GHz).
LAMBDA_EXCITED = 3000.0

#: Ground-state spin-orbit splitting of the unstrained emitter SnV-D (GHz).
LAMBDA_GROUND = 822.0

#: Orbital quenching factors (per m_j doublet, ground and excited).
QUENCHING = {"f32_g": 0.268, "f32_u": 0.251, "f12_g": 0.486, "f12_u": 0.500}

#: Per-emitter strain (GHz), calibrated field magnitudes (T) and misalignment (deg).
EMITTERS = {
    "A": {"upsilon_g": 35.0, "upsilon_u": 60.0, "b_parallel_cal": 0.19344, "b_perp_cal": 0.19348, "delta_theta": -0.08},
    "B": {"upsilon_g": 577.3, "upsilon_u": 961.90, "b_parallel_cal": 0.19346, "b_perp_cal": 0.18903, "delta_theta": -0.54},
    "C": {"upsilon_g": 530.0, "upsilon_u": 921.4, "b_parallel_cal": 0.19347, "b_perp_cal": 0.19345, "delta_theta": -0.46},
    "D": {"upsilon_g": 0.0, "upsilon_u": 0.0, "b_parallel_cal": 0.190, "b_perp_cal": 0.190, "delta_theta": 0.0},
}

#: Magnet coil gains along lab X, Y, Z (mT/A).
COIL_GAINS_MT_PER_A = (-45.7, 61.5, 133.5)

#: Quantization axes of the emitters in the lab frame, as listed (not normalized).
SNV_AXES = {
    "A": (-0.081, 0.834, -0.546),
    "B": (0.011, 0.722, 0.692),
    "C": (-0.015, 0.883, -0.468),
}

#: Assumed relative error on calibrated field magnitudes.
FIELD_REL_ERROR = 0.005
