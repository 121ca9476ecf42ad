"""Staged parameter estimation from rotation-map spectroscopy.

The parameters are determined one at a time, each from the dataset that is
most sensitive to it, in a fixed order:

1. ``lambda_g`` from the zero-field PL splitting of an unstrained emitter,
2. ``upsilon_g`` from the qubit splitting at perpendicular field,
3. ``upsilon_u`` from the allowed-transition splitting at perpendicular field,
4. ``f32_g`` from the low-strain qubit map,
5. ``f32_u`` from the low-strain allowed-split map,
6. ``f12_g`` from the high-strain qubit map,
7. ``f12_u`` from the high-strain allowed-split map.

Stages 2 and 3 run for every strained emitter. The polar misalignment of each
emitter is co-fitted as a nuisance parameter in stages 4-7.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .constants import DEFAULT_CONSTANTS, FIELD_REL_ERROR, LAMBDA_EXCITED, LAMBDA_GROUND, PhysicalConstants
from .hamiltonian import ManifoldParams, SnVModel, energies_stack
from .optimize import FitError, levenberg_marquardt
from .transitions import observables_stack, sweep_fields

KINDS = ("odmr_qubit", "allowed_split", "forbidden_split", "pl_splitting")
F_PARAMS = ("f32_g", "f32_u", "f12_g", "f12_u")
STAGE_ORDER = ("lambda_g", "upsilon_g", "upsilon_u", "f32_g", "f32_u", "f12_g", "f12_u")
STAGE_KIND = {
    "lambda_g": "pl_splitting",
    "upsilon_g": "odmr_qubit",
    "upsilon_u": "allowed_split",
    "f32_g": "odmr_qubit",
    "f32_u": "allowed_split",
    "f12_g": "odmr_qubit",
    "f12_u": "allowed_split",
}


class ConvergenceError(FitError):
    pass


@dataclass(frozen=True)
class SpectroscopyDataset:
    """One measured curve: ``points`` holds (theta in degrees, value in GHz).

    ``signed`` marks allowed/forbidden splittings whose sign follows this
    package's convention; unsigned data are compared as magnitudes.
    """

    emitter: str
    kind: str
    points: tuple
    field_magnitude: float
    plane: str = "yz"
    signed: bool = False
    b_parallel_cal: float | None = None
    b_perp_cal: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.plane not in ("yz", "xy"):
            raise ValueError(f"unknown plane {self.plane!r}")
        pts = tuple((float(t), float(v)) for t, v in self.points)
        if not pts:
            raise ValueError("dataset has no points")
        if not all(math.isfinite(t) and math.isfinite(v) for t, v in pts):
            raise ValueError("dataset contains non-finite values")
        if self.kind != "pl_splitting" and not self.field_magnitude > 0:
            raise ValueError("field_magnitude must be positive for field-dependent data")
        object.__setattr__(self, "points", pts)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


@dataclass(frozen=True)
class FitStage:
    target_param: str
    dataset_kind: str
    frozen_params: frozenset = frozenset()
    fit_delta_theta: bool = False

    @classmethod
    def for_param(cls, target: str, frozen=(), fit_delta_theta: bool | None = None) -> "FitStage":
        if target not in STAGE_KIND:
            raise ValueError(f"unknown target parameter {target!r}")
        if fit_delta_theta is None:
            fit_delta_theta = target in F_PARAMS
        return cls(target, STAGE_KIND[target], frozenset(frozen), fit_delta_theta)


@dataclass
class FitResult:
    params: SnVModel
    residual_rms: float
    per_param_spread: dict = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0
    gradient_norm: float = 0.0
    message: str = ""
    cost_history: list = field(default_factory=list)


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 200
    ftol: float = 1e-12
    diff_step: float = 1e-6
    f_init: float = 0.3
    window_deg: float = 20.0
    fit_delta_theta: bool = True
    f_starts: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    refine_passes: int = 20
    refine_tol: float = 1e-10


def dataset_fields(model: SnVModel, data: SpectroscopyDataset):
    if model.b_parallel_cal is not None and model.b_perp_cal is not None:
        return sweep_fields(model, data.plane, data.thetas)
    return sweep_fields(model, data.plane, data.thetas, data.field_magnitude)


def predict(model: SnVModel, data: SpectroscopyDataset, constants=DEFAULT_CONSTANTS) -> np.ndarray:
    """Model values at the dataset's angles, from the full Hamiltonian."""
    if data.kind == "pl_splitting":
        e = energies_stack(model.ground, 0.0, 0.0, constants)[0]
        return np.full(len(data.points), 0.5 * (e[2] + e[3] - e[0] - e[1]))
    b_par, b_perp = dataset_fields(model, data)
    q, a, f = observables_stack(model, b_par, b_perp, constants)
    if data.kind == "odmr_qubit":
        return q
    values = a if data.kind == "allowed_split" else f
    return values if data.signed else np.abs(values)


def residuals(model: SnVModel, data: SpectroscopyDataset, constants=DEFAULT_CONSTANTS) -> np.ndarray:
    return data.values - predict(model, data, constants)


# parameter transforms keeping the optimizer unconstrained


def _softplus(z):
    return z + math.log1p(math.exp(-z)) if z > 0 else math.log1p(math.exp(z))


def _softplus_inv(y):
    y = max(y, 1e-300)
    return y + math.log(-math.expm1(-y)) if y < 700 else y


def _logistic(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def _logit(y):
    y = min(max(y, 1e-12), 1 - 1e-12)
    return math.log(y / (1 - y))


def _to_internal(name, value):
    if name.startswith("f"):
        return _logit(value)
    if name == "delta_theta":
        return math.atanh(max(min(value / 5.0, 1 - 1e-15), -1 + 1e-15))
    return _softplus_inv(value)


def _to_external(name, z):
    if name.startswith("f"):
        return _logistic(z)
    if name == "delta_theta":
        return 5.0 * math.tanh(z)
    return _softplus(z)


def _least_squares(model, names, resid_fn, options):
    z0 = [_to_internal(n, model.get_param(n)) for n in names]

    def build(z):
        return model.with_params(**{n: _to_external(n, zi) for n, zi in zip(names, z)})

    def fun(z):
        try:
            return resid_fn(build(z))
        except ValueError:
            return np.full(len(resid_fn(model)), np.inf)

    res = levenberg_marquardt(fun, z0, max_iterations=options.max_iterations, ftol=options.ftol, rel_step=options.diff_step)
    fitted = build(res.x)
    for n in names:
        v = fitted.get_param(n)
        if n.startswith("f") and (v < 1e-6 or v > 1 - 1e-6):
            raise FitError(f"parameter {n} ran to its bound ({v:.3g})")
    return fitted, res


# helpers locating the perpendicular-field value on a yz rotation map


def _ellipse(theta_deg, perp, par, centre):
    # splitting of an axial doublet; ``centre`` is where the field is perpendicular
    t = np.radians(theta_deg - centre)
    return np.sqrt((perp * np.cos(t)) ** 2 + (par * np.sin(t)) ** 2)


def _window(data: SpectroscopyDataset, centre: float, width: float):
    th = data.thetas
    d = (th - centre + 180.0) % 360.0 - 180.0
    sel = np.abs(d) <= width
    return centre + d[sel], data.values[sel]


def perpendicular_qubit(data: SpectroscopyDataset, width: float = 20.0) -> tuple[float, float]:
    """Qubit splitting at exactly perpendicular field and the angle where it occurs.

    Near perpendicular orientation the lower ground doublet behaves like a
    spin-1/2 with an axial g tensor, so the qubit curve is fitted with
    sqrt((q_perp cos)^2 + (q_par sin)^2) about a centre near 90 degrees.
    """
    th, y = _window(data, 90.0, width)
    if th.size < 4:
        th, y = _window(data, 270.0, width)
        th = th - 180.0
    if th.size < 4:
        i = int(np.argmin(np.abs((data.thetas - 90.0 + 180.0) % 360.0 - 180.0)))
        return float(data.values[i]), 0.0
    i = int(np.argmin(y))
    p0 = [float(y[i]), 3.0 * float(np.max(y)), float(th[i] - 90.0)]
    res = levenberg_marquardt(lambda p: _ellipse(th, p[0], p[1], 90.0 + p[2]) - y, p0, max_iterations=200)
    q_perp, _, t0 = res.x
    if abs(t0) > 5.0:
        return float(y[i]), float(th[i] - 90.0)
    return float(abs(q_perp)), float(t0)


def perpendicular_allowed(
    data: SpectroscopyDataset, qubit_perp: float, theta0: float, width: float = 20.0
) -> float:
    """Allowed-transition splitting at perpendicular field.

    Models the curve near 90 degrees as the difference of a ground and an
    excited doublet ellipse sharing the axis offset ``theta0``; the ground
    ellipse minimum is pinned to ``qubit_perp``.
    """
    th, y = _window(data, 90.0, width)
    if th.size < 4:
        i = int(np.argmin(np.abs((data.thetas - 90.0 + 180.0) % 360.0 - 180.0)))
        return float(data.values[i])
    centre = 90.0 + theta0

    def curve(p):
        # p = (ground parallel, excited perpendicular, excited parallel)
        v = _ellipse(th, qubit_perp, p[0], centre) - _ellipse(th, p[1], p[2], centre)
        return v if data.signed else np.abs(v)

    i = int(np.argmin(np.abs(th - centre)))
    best = None
    for q_par in (7.0, 6.0, 5.0):
        for sign in (1.0, -1.0):
            p0 = [q_par, abs(qubit_perp - sign * abs(y[i])), q_par - 0.1]
            res = levenberg_marquardt(lambda p: curve(p) - y, p0, max_iterations=200)
            if best is None or res.cost < best.cost:
                best = res
    value = qubit_perp - abs(best.x[1])
    return float(value if data.signed else abs(value))


def _invert_perpendicular_qubit(q, lam, b_perp, gamma_s):
    """Strain reproducing an analytic perpendicular qubit splitting ``q``."""
    b = gamma_s * b_perp

    def g(alpha):
        return 0.5 * (math.hypot(b + 2 * alpha, lam) - math.hypot(b - 2 * alpha, lam)) - q

    hi = 10.0
    while g(hi) < 0 and hi < 1e6:
        hi *= 2.0
    if g(0.0) >= 0:
        return 0.0
    if g(hi) < 0:
        return hi
    return brentq(g, 0.0, hi, xtol=1e-12)


def _require(data: SpectroscopyDataset, kinds, stage: FitStage):
    if data.kind not in kinds:
        raise FitError(
            f"stage {stage.target_param} needs {' or '.join(kinds)} data, got {data.kind} for emitter {data.emitter}"
        )


def _check_frozen(stage: FitStage):
    if stage.target_param in stage.frozen_params:
        raise FitError(f"parameter {stage.target_param} is frozen and cannot be refitted")


def _perp_field(model: SnVModel, data: SpectroscopyDataset) -> float:
    return model.b_perp_cal if model.b_perp_cal is not None else data.field_magnitude


def fit_stage(
    stage: FitStage,
    data: SpectroscopyDataset,
    model_in: SnVModel,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
    options: FitOptions = FitOptions(),
    multistart: bool = True,
) -> FitResult:
    """Fit one parameter of ``model_in`` to one dataset, leaving the rest untouched.

    Quenching-factor stages start from the current value and, with
    ``multistart``, from each of ``options.f_starts``; magnitude data can have
    a mirror minimum that a single start would settle in.
    """
    _check_frozen(stage)
    target = stage.target_param
    _require(data, (stage.dataset_kind,), stage)

    if target == "lambda_g":
        fitted, res = _least_squares(model_in, ["lambda_g"], lambda m: residuals(m, data, constants), options)
        return _result(fitted, res, data, constants)

    if target == "upsilon_g":
        q0, theta0 = perpendicular_qubit(data, options.window_deg)
        b_perp = _perp_field(model_in, data)
        start = _invert_perpendicular_qubit(q0, model_in.ground.lam, b_perp, constants.gamma_s)
        model = model_in.with_params(upsilon_g=max(start, 1e-3), delta_theta=theta0)

        def resid(m):
            q, _, _ = observables_stack(m, 0.0, b_perp, constants)
            return np.array([q0 - q[0]])

        fitted, res = _least_squares(model, ["upsilon_g"], resid, options)
        return _result(fitted, res, None, constants, resid)

    if target == "upsilon_u":
        b_perp = _perp_field(model_in, data)
        q_model, _, _ = observables_stack(model_in, 0.0, b_perp, constants)
        a0 = perpendicular_allowed(data, float(q_model[0]), model_in.delta_theta, options.window_deg)

        def resid(m):
            _, a, _ = observables_stack(m, 0.0, b_perp, constants)
            return np.array([a0 - (a[0] if data.signed else abs(a[0]))])

        # unsigned data admit two strain values; the whole map decides between them
        roots = []
        for start in (10.0, 100.0, 300.0, 1000.0, 3000.0):
            try:
                fitted, res = _least_squares(model_in.with_params(upsilon_u=start), ["upsilon_u"], resid, options)
            except FitError:
                continue
            if res.converged and math.sqrt(2 * res.cost) <= 1e-6 * max(abs(a0), 1e-3):
                roots.append((fitted, res))
        if not roots:
            raise ConvergenceError("upsilon_u: no strain value reproduces the perpendicular splitting")

        distinct = []
        for cand in sorted(roots, key=lambda c: c[0].excited.upsilon):
            if not distinct or abs(cand[0].excited.upsilon - distinct[-1][0].excited.upsilon) > 1e-6 * cand[0].excited.upsilon:
                distinct.append(cand)

        def map_cost(candidate):
            # the excited-state quenching and the axis offset are still free here
            try:
                _, res = _least_squares(
                    candidate[0], ["f32_u", "f12_u", "delta_theta"], lambda m: residuals(m, data, constants), options
                )
            except FitError:
                return math.inf
            return res.cost

        best = distinct[0] if len(distinct) == 1 else min(distinct, key=map_cost)
        return _result(best[0], best[1], None, constants, resid)

    names = [target] + (["delta_theta"] if stage.fit_delta_theta and options.fit_delta_theta else [])
    if data.plane != "yz":
        raise FitError(f"stage {target} needs a yz rotation map")
    starts = [model_in.get_param(target)]
    if multistart:
        starts += [v for v in options.f_starts if v != starts[0]]
    best = None
    for start in starts:
        try:
            fitted, res = _least_squares(
                model_in.with_params(**{target: start}), names, lambda m: residuals(m, data, constants), options
            )
        except FitError as exc:
            error = exc
            continue
        if best is None or res.cost < best[1].cost:
            best = (fitted, res)
    if best is None:
        raise error
    return _result(best[0], best[1], data, constants)


def _result(model, res, data, constants, resid_fn=None):
    r = residuals(model, data, constants) if data is not None else resid_fn(model)
    return FitResult(
        params=model,
        residual_rms=float(np.sqrt(np.mean(r**2))),
        converged=res.converged,
        iterations=res.iterations,
        gradient_norm=res.gradient_norm,
        message=res.message,
        cost_history=list(res.cost_history),
    )


# pipeline


@dataclass(frozen=True)
class PipelineConfig:
    """Options for :func:`run_staged_pipeline`.

    ``roles`` maps ``unstrained``, ``low_strain``, ``high_strain`` to emitter
    labels and ``holdout`` to a list of labels; missing roles are inferred.
    ``field_scale`` multiplies every emitter's calibrated (parallel,
    perpendicular) field. ``f_start`` seeds the quenching factors and turns
    off the multi-start search of the first sweep.
    """

    roles: Mapping | None = None
    options: FitOptions = FitOptions()
    constants: PhysicalConstants = DEFAULT_CONSTANTS
    field_scale: tuple = (1.0, 1.0)
    lambda_u: float = LAMBDA_EXCITED
    f_start: Mapping | None = None


@dataclass
class PipelineResult:
    results: dict
    summary: list
    holdout_rms: dict
    roles: dict
    stage_log: list

    def to_json_dict(self) -> dict:
        return {
            "roles": self.roles,
            "summary": self.summary,
            "holdout_residual_rms_GHz": self.holdout_rms,
            "stages": self.stage_log,
            "emitters": {e: model_to_dict(r.params) | {"residual_rms_GHz": r.residual_rms} for e, r in self.results.items()},
        }

    def to_text(self) -> str:
        return summary_table_text(self.summary)


def model_to_dict(model: SnVModel) -> dict:
    return {
        "emitter": model.emitter,
        "ground": {"lambda": model.ground.lam, "f_12": model.ground.f_12, "f_32": model.ground.f_32, "upsilon": model.ground.upsilon},
        "excited": {"lambda": model.excited.lam, "f_12": model.excited.f_12, "f_32": model.excited.f_32, "upsilon": model.excited.upsilon},
        "b_parallel_cal": model.b_parallel_cal,
        "b_perp_cal": model.b_perp_cal,
        "delta_theta": model.delta_theta,
    }


def model_from_dict(d: Mapping) -> SnVModel:
    allowed = {"emitter", "ground", "excited", "b_parallel_cal", "b_perp_cal", "delta_theta"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown model keys: {', '.join(sorted(unknown))}")

    def manifold(m, default_lam):
        extra = set(m) - {"lambda", "f_12", "f_32", "upsilon"}
        if extra:
            raise ValueError(f"unknown manifold keys: {', '.join(sorted(extra))}")
        return ManifoldParams(
            float(m.get("lambda", default_lam)),
            float(m.get("f_12", 0.3)),
            float(m.get("f_32", 0.3)),
            float(m.get("upsilon", 0.0)),
        )

    if "ground" not in d:
        raise ValueError("model needs a 'ground' section")
    return SnVModel(
        ground=manifold(d["ground"], None),
        excited=manifold(d.get("excited", {}), LAMBDA_EXCITED),
        b_parallel_cal=None if d.get("b_parallel_cal") is None else float(d["b_parallel_cal"]),
        b_perp_cal=None if d.get("b_perp_cal") is None else float(d["b_perp_cal"]),
        delta_theta=float(d.get("delta_theta", 0.0)),
        emitter=str(d.get("emitter", "")),
    )


def _find(datasets: Sequence[SpectroscopyDataset], kind: str, plane: str | None = "yz"):
    for d in datasets:
        if d.kind == kind and (plane is None or d.plane == plane):
            return d
    return None


def _strain_estimate(data: SpectroscopyDataset, lam_g: float, options, constants) -> float:
    q, _ = perpendicular_qubit(data, options.window_deg)
    b_perp = data.b_perp_cal if data.b_perp_cal is not None else data.field_magnitude
    return _invert_perpendicular_qubit(q, lam_g, b_perp, constants.gamma_s)


def _infer_roles(
    datasets: Mapping[str, Sequence[SpectroscopyDataset]], given: Mapping | None, options, constants=DEFAULT_CONSTANTS,
    lam_g: float | None = None,
) -> dict:
    """Fill in missing roles; strained emitters are ranked by their estimated ground strain."""
    roles = dict(given or {})
    if "unstrained" not in roles:
        with_pl = sorted(e for e, ds in datasets.items() if _find(ds, "pl_splitting", None) is not None)
        if not with_pl:
            raise FitError("stage lambda_g: no emitter provides pl_splitting data")
        roles["unstrained"] = with_pl[0]
    strained = [e for e in datasets if e != roles["unstrained"]]
    if "low_strain" not in roles or "high_strain" not in roles:
        if lam_g is None:
            pl = _find(datasets[roles["unstrained"]], "pl_splitting", None)
            lam_g = float(np.mean(pl.values)) if pl is not None else LAMBDA_GROUND
        ranked = []
        for e in strained:
            q = _find(datasets[e], "odmr_qubit")
            if q is not None:
                ranked.append((_strain_estimate(q, lam_g, options, constants), e))
        ranked.sort()
        if len(ranked) < 2:
            raise FitError("stage f32_g: need odmr_qubit maps of at least two strained emitters")
        roles.setdefault("low_strain", ranked[0][1])
        roles.setdefault("high_strain", ranked[-1][1])
    if "holdout" not in roles:
        roles["holdout"] = [e for e in strained if e not in (roles["low_strain"], roles["high_strain"])]
    roles["holdout"] = list(roles["holdout"])
    return roles


_REQUIREMENTS = (
    ("lambda_g", "unstrained", "pl_splitting"),
    ("f32_g", "low_strain", "odmr_qubit"),
    ("f32_u", "low_strain", "allowed_split"),
    ("f12_g", "high_strain", "odmr_qubit"),
    ("f12_u", "high_strain", "allowed_split"),
)


def _preflight(datasets, roles):
    for stage, role, kind in _REQUIREMENTS:
        emitter = roles[role]
        ds = datasets.get(emitter, ())
        plane = None if kind == "pl_splitting" else "yz"
        if _find(ds, kind, plane) is None:
            raise FitError(
                f"stage {stage}: missing {kind} data for {role.replace('_', '-')} emitter {emitter!r}"
            )


def _initial_model(emitter, datasets, lam_g, config: PipelineConfig) -> SnVModel:
    ref = next((d for d in datasets if d.kind != "pl_splitting"), datasets[0])
    s_par, s_perp = config.field_scale
    b_par = ref.b_parallel_cal if ref.b_parallel_cal is not None else ref.field_magnitude
    b_perp = ref.b_perp_cal if ref.b_perp_cal is not None else ref.field_magnitude
    f0 = config.options.f_init
    return SnVModel(
        ground=ManifoldParams(lam_g, f0, f0, 0.0),
        excited=ManifoldParams(config.lambda_u, f0, f0, 0.0),
        b_parallel_cal=b_par * s_par if b_par else None,
        b_perp_cal=b_perp * s_perp if b_perp else None,
        emitter=emitter,
    )


def run_staged_pipeline(
    datasets: Mapping[str, Sequence[SpectroscopyDataset]], config: PipelineConfig = PipelineConfig()
) -> PipelineResult:
    """Run the seven fit stages over emitters with distinct strain and validate on holdouts."""
    opts, const = config.options, config.constants
    roles = _infer_roles(datasets, config.roles, opts, const)
    _preflight(datasets, roles)
    log = []
    frozen: set = set()

    def run(stage_name, emitter, model, data, sweep=0):
        stage = FitStage.for_param(stage_name, frozen - {stage_name})
        res = fit_stage(stage, data, model, const, opts, multistart=sweep == 0 and config.f_start is None)
        if not res.converged:
            raise ConvergenceError(f"stage {stage_name} on emitter {emitter} did not converge: {res.message}")
        log.append({"stage": stage_name, "emitter": emitter, "sweep": sweep,
                    "value": float(res.params.get_param(stage_name)),
                    "residual_rms_GHz": res.residual_rms, "iterations": res.iterations})
        return res

    unstrained = roles["unstrained"]
    pl = _find(datasets[unstrained], "pl_splitting", None)
    seed = SnVModel(ManifoldParams(max(float(np.mean(pl.values)), 1.0), opts.f_init, opts.f_init, 0.0), emitter=unstrained)
    lam_res = run("lambda_g", unstrained, seed, pl)
    lam_g = lam_res.params.ground.lam
    frozen.add("lambda_g")

    strained = [roles["low_strain"], roles["high_strain"]] + [e for e in roles["holdout"]]
    models = {}
    for emitter in strained:
        ds = datasets[emitter]
        model = _initial_model(emitter, ds, lam_g, config)
        qubit, allowed = _find(ds, "odmr_qubit"), _find(ds, "allowed_split")
        if qubit is None:
            raise FitError(f"stage upsilon_g: missing odmr_qubit data for emitter {emitter!r}")
        model = run("upsilon_g", emitter, model, qubit).params
        if allowed is not None:
            model = run("upsilon_u", emitter, model, allowed).params
        models[emitter] = model
    frozen.update({"upsilon_g", "upsilon_u"})

    low, high = roles["low_strain"], roles["high_strain"]
    sources = {"lambda_g": unstrained}
    f_stages = (
        ("f32_g", low, "odmr_qubit"),
        ("f32_u", low, "allowed_split"),
        ("f12_g", high, "odmr_qubit"),
        ("f12_u", high, "allowed_split"),
    )
    current = {p: opts.f_init for p in F_PARAMS}
    if config.f_start is not None:
        current.update({p: float(config.f_start[p]) for p in F_PARAMS if p in config.f_start})
    for sweep in range(1 + opts.refine_passes):
        previous = dict(current)
        for name, emitter, kind in f_stages:
            frozen.update(p for p in F_PARAMS if p != name)
            model = models[emitter].with_params(**current)
            models[emitter] = run(name, emitter, model, _find(datasets[emitter], kind), sweep).params
            current[name] = models[emitter].get_param(name)
            sources[name] = emitter
        change = max(abs(current[p] - previous[p]) / max(abs(current[p]), 1e-12) for p in F_PARAMS)
        if sweep > 0 and change < opts.refine_tol:
            break
    final_f = dict(current)

    results = {}
    holdout_rms = {}
    for emitter in strained:
        model = models[emitter].with_params(**final_f)
        data = [d for d in datasets[emitter] if d.kind in ("odmr_qubit", "allowed_split", "forbidden_split")]
        if emitter in roles["holdout"]:
            if opts.fit_delta_theta:
                model, _ = _least_squares(
                    model, ["delta_theta"], lambda m: np.concatenate([residuals(m, d, const) for d in data]), opts
                )
        r = np.concatenate([residuals(model, d, const) for d in data])
        rms = float(np.sqrt(np.mean(r**2)))
        if emitter in roles["holdout"]:
            holdout_rms[emitter] = rms
        results[emitter] = FitResult(model, rms, converged=True)
    results[unstrained] = FitResult(
        lam_res.params.with_params(**final_f), lam_res.residual_rms, converged=lam_res.converged,
        iterations=lam_res.iterations,
    )

    summary = build_summary(results, sources, roles, const, config.lambda_u)
    return PipelineResult(results, summary, holdout_rms, roles, log)


def build_summary(results, sources, roles, constants, lambda_u, spreads=None) -> list:
    """Rows of (parameter, value, unit, source emitter, spread)."""
    spreads = spreads or {}
    rows = [
        {"parameter": "gamma_l", "value": constants.gamma_l, "unit": "GHz/T", "source": "fixed", "spread": None},
        {"parameter": "gamma_s", "value": constants.gamma_s, "unit": "GHz/T", "source": "fixed", "spread": None},
        {"parameter": "lambda_g", "value": results[sources["lambda_g"]].params.ground.lam, "unit": "GHz",
         "source": sources["lambda_g"], "spread": spreads.get("lambda_g")},
        {"parameter": "lambda_u", "value": lambda_u, "unit": "GHz", "source": "fixed", "spread": None},
    ]
    for p in F_PARAMS:
        rows.append({"parameter": p, "value": results[sources[p]].params.get_param(p), "unit": "",
                     "source": sources[p], "spread": spreads.get(p)})
    strained = [roles["low_strain"], roles["high_strain"]] + list(roles["holdout"])
    for e in strained:
        m = results[e].params
        for p, v, unit in (
            ("upsilon_g", m.ground.upsilon, "GHz"),
            ("upsilon_u", m.excited.upsilon, "GHz"),
            ("b_parallel", m.b_parallel_cal, "T"),
            ("b_perp", m.b_perp_cal, "T"),
            ("delta_theta", m.delta_theta, "deg"),
        ):
            key = f"{p}[{e}]"
            rows.append({"parameter": key, "value": v, "unit": unit, "source": e, "spread": spreads.get(key)})
    return rows


def summary_table_text(rows) -> str:
    header = ("parameter", "value", "unit", "source", "spread")
    lines = []
    for r in rows:
        spread = "" if r["spread"] is None else f"{r['spread']:.6g}"
        value = "" if r["value"] is None else f"{r['value']:.8g}"
        lines.append((r["parameter"], value, r["unit"], r["source"], spread))
    widths = [max(len(h), *(len(l[i]) for l in lines)) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    out += [fmt.format(*l) for l in lines]
    return "\n".join(s.rstrip() for s in out) + "\n"


# field-magnitude uncertainty


@dataclass
class UncertaintyResult:
    per_param_spread: dict
    grid_values: dict
    scales: list
    failures: int
    failed_cells: list

    def to_json_dict(self) -> dict:
        return {
            "per_param_spread": self.per_param_spread,
            "failures": self.failures,
            "failed_cells": self.failed_cells,
            "scales": self.scales,
            "grid_values": self.grid_values,
        }


def _spread_params(result: PipelineResult) -> dict:
    out = {r["parameter"]: r["value"] for r in result.summary if r["source"] != "fixed"}
    return {k: v for k, v in out.items() if not k.startswith(("b_parallel", "b_perp"))}


def _grid_cell(args):
    datasets, config, scale = args
    try:
        return _spread_params(run_staged_pipeline(datasets, replace(config, field_scale=scale))), None
    except FitError as exc:
        return None, str(exc)


def propagate_field_uncertainty(
    datasets: Mapping[str, Sequence[SpectroscopyDataset]],
    config: PipelineConfig = PipelineConfig(),
    rel_error: float = FIELD_REL_ERROR,
    grid_n: int = 5,
    jobs: int = 1,
) -> UncertaintyResult:
    """Refit on a grid_n x grid_n grid of (parallel, perpendicular) field scalings.

    Scalings are ``1 + x * rel_error`` for ``x`` evenly spaced in [-1, 1]. The
    spread of a parameter is the full range of its fitted values over the grid.
    """
    if not rel_error >= 0:
        raise ValueError("rel_error must be non-negative")
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    xs = np.linspace(-1.0, 1.0, grid_n)
    scales = [(1.0 + xi * rel_error, 1.0 + xj * rel_error) for xi in xs for xj in xs]
    if config.f_start is None:
        # the unperturbed fit seeds every cell, which makes the multi-start search unnecessary
        nominal = run_staged_pipeline(datasets, config)
        seed = {r["parameter"]: r["value"] for r in nominal.summary if r["parameter"] in F_PARAMS}
        config = replace(config, f_start=seed, roles=nominal.roles)
    tasks = [(datasets, config, s) for s in scales]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_grid_cell, tasks))
    else:
        outcomes = [_grid_cell(t) for t in tasks]

    values: dict = {}
    failed = []
    for idx, (vals, err) in enumerate(outcomes):
        if vals is None:
            failed.append({"index": idx, "scale": list(scales[idx]), "error": err})
            continue
        for k, v in vals.items():
            values.setdefault(k, [None] * len(scales))[idx] = v
    spreads = {}
    for k, vs in values.items():
        ok = [v for v in vs if v is not None]
        spreads[k] = float(max(ok) - min(ok)) if ok else float("nan")
    return UncertaintyResult(spreads, values, [list(s) for s in scales], len(failed), failed)


def dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "ConvergenceError",
    "FitError",
    "FitOptions",
    "FitResult",
    "FitStage",
    "PipelineConfig",
    "PipelineResult",
    "SpectroscopyDataset",
    "UncertaintyResult",
    "fit_stage",
    "predict",
    "propagate_field_uncertainty",
    "run_staged_pipeline",
]
