"""Synthetic datasets generated from the reference emitter parameters.

Everything produced here is labeled synthetic; it exists so the fit pipeline
and the CLI can be exercised without laboratory data.
"""

from __future__ import annotations

import math

import numpy as np

from .constants import DEFAULT_CONSTANTS, EMITTERS, LAMBDA_EXCITED, LAMBDA_GROUND, QUENCHING
from .fitting import SpectroscopyDataset, predict
from .hamiltonian import ManifoldParams, SnVModel
from .transitions import DEFAULT_THETA_GRID

NOMINAL_FIELD = 0.19


def reference_model(emitter: str, **overrides) -> SnVModel:
    """Reference parameters of emitter A, B, C or D as a model."""
    e = EMITTERS[emitter]
    q = QUENCHING
    model = SnVModel(
        ground=ManifoldParams(LAMBDA_GROUND, q["f12_g"], q["f32_g"], e["upsilon_g"]),
        excited=ManifoldParams(LAMBDA_EXCITED, q["f12_u"], q["f32_u"], e["upsilon_u"]),
        b_parallel_cal=e["b_parallel_cal"],
        b_perp_cal=e["b_perp_cal"],
        delta_theta=e["delta_theta"],
        emitter=emitter,
    )
    return model.with_params(**overrides) if overrides else model


def make_dataset(
    model: SnVModel,
    kind: str,
    theta_grid=DEFAULT_THETA_GRID,
    plane: str = "yz",
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
    signed: bool = False,
    field_magnitude: float = NOMINAL_FIELD,
    constants=DEFAULT_CONSTANTS,
) -> SpectroscopyDataset:
    """Dataset of ``kind`` predicted by ``model``, with optional Gaussian noise (GHz)."""
    grid = [float(t) for t in theta_grid]
    template = SpectroscopyDataset(
        model.emitter, kind, tuple((t, 0.0) for t in grid), field_magnitude, plane, signed,
        model.b_parallel_cal, model.b_perp_cal,
    )
    values = predict(model, template, constants)
    if noise:
        rng = rng or np.random.default_rng(0)
        values = values + rng.normal(0.0, noise, size=values.shape)
    return SpectroscopyDataset(
        model.emitter, kind, tuple(zip(grid, values)), field_magnitude, plane, signed,
        model.b_parallel_cal, model.b_perp_cal,
    )


def reference_suite(theta_grid=DEFAULT_THETA_GRID, emitters="ABCD", noise: float = 0.0, seed: int = 0) -> dict:
    """Datasets for the reference emitters: PL of D, qubit and allowed-split maps of A, B, C."""
    rng = np.random.default_rng(seed)
    suite = {}
    for e in emitters:
        model = reference_model(e)
        if e == "D":
            suite[e] = [make_dataset(model, "pl_splitting", theta_grid=[0.0], field_magnitude=0.0, rng=rng, noise=noise)]
            continue
        suite[e] = [
            make_dataset(model, "odmr_qubit", theta_grid, noise=noise, rng=rng),
            make_dataset(model, "allowed_split", theta_grid, noise=noise, rng=rng),
        ]
    return suite


# fixtures for the supporting analyses

#: Echo model parameters of the bundled traces; bath frequencies are 0.967 and
#: 0.945 of the Larmor frequency expected at the 100 mT nominal field.
ECHO_PARALLEL = {"A": 0.5, "B": -1.0, "f": 0.51775, "phi": 0.3, "T_damp": 100.0, "a": 0.002, "DC": 0.2}
ECHO_PERPENDICULAR = {"A": 0.6, "f1": 0.506, "f2": 1.2, "DC": 0.2}
ECHO_TAUS_US = tuple(float(t) for t in np.linspace(0.0, 40.0, 2000))

#: CPMG suite: T2 = 0.179 ms * N**0.95 for N = 1 ... 64.
CPMG_PULSES = (1, 2, 4, 8, 16, 32, 64)
CPMG_T2_1 = 0.179
CPMG_BETA = 0.95


def cpmg_t2(n_pulses: int) -> float:
    return CPMG_T2_1 * n_pulses**CPMG_BETA


def cpmg_rows(points: int = 120, noise: float = 0.0, seed: int = 0, counts_scale: float = 1000.0):
    """Rows (n_pulses, time_ms, counts) of the synthetic CPMG suite."""
    from .coherence import synthetic_decay

    rng = np.random.default_rng(seed)
    rows = []
    for n in CPMG_PULSES:
        t2 = cpmg_t2(n)
        times = np.linspace(0.0, 3.0 * t2, points)
        trace = synthetic_decay(n, t2, times, noise=noise, rng=rng, counts_scale=counts_scale)
        rows += [(n, t, c) for t, c in trace.points]
    return rows


def cut_strain_grid(points: int = 21, peak: float = 2e-4, half_width_um: float = 500.0):
    """Biaxial strain along a straight cut from the membrane edge to its centre.

    ``eps_xx = eps_yy`` grows towards the centre, ``eps_zz`` follows with the
    opposite sign and ``eps_xy`` adds an in-plane shear; the out-of-plane
    shears vanish, so all four <111> orientations share the same A1 shift.
    """
    from .strain import StrainTensor

    grid = []
    for x in np.linspace(0.0, half_width_um, points):
        s = peak * math.sin(0.5 * math.pi * x / half_width_um)
        grid.append((float(x), 0.0, StrainTensor(s, s, -0.8 * s, 0.3 * s, 0.0, 0.0)))
    return grid
