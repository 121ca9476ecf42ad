"""Command-line interface: ``snvspin <subcommand> [options]``.

Every subcommand writes its results under ``--out``. Failures print one line
``snvspin: error: <category>: <message>`` to stderr and exit with status 1;
usage errors print ``snvspin: usage-error: <message>`` and exit with 2.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .calibration import calibrate, fft_spectrum, synthetic_trace
from .coherence import fit_power_law, fit_stretched_exponential, normalize_decay, stretched_exponential
from .fitting import FitError, PipelineConfig, propagate_field_uncertainty, run_staged_pipeline
from .hamiltonian import FieldSnV, build_full_hamiltonian, manifold_energies
from .selftest import run_all
from .strain import DEFAULT_SUSCEPTIBILITIES, strain_map
from .synthetic import (
    ECHO_PARALLEL,
    ECHO_PERPENDICULAR,
    ECHO_TAUS_US,
    cpmg_rows,
    cut_strain_grid,
    reference_model,
    reference_suite,
)
from .transitions import DEFAULT_THETA_GRID, field_in_snv_frame, observables, rotation_map

PROG = "snvspin"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _field_from_args(args, config, model=None) -> FieldSnV:
    given = [args.b_par is not None or args.b_perp is not None, args.magnitude is not None,
             args.b_lab is not None or args.currents is not None]
    if sum(given) != 1:
        raise UsageError("give the field as --b-par/--b-perp, as --magnitude/--theta, or as --b-lab/--currents")
    if given[0]:
        return FieldSnV.from_components(args.b_par or 0.0, args.b_perp or 0.0)
    if given[1]:
        return FieldSnV.from_angles(args.magnitude, args.theta, args.phi)
    emitter = args.emitter or (model.emitter if model is not None else "")
    if args.b_lab is not None:
        return field_in_snv_frame(config.calibration, emitter, b_lab=args.b_lab)
    return field_in_snv_frame(config.calibration, emitter, coil_currents=args.currents)


def _add_field_args(p):
    p.add_argument("--b-par", type=float, help="field along the quantization axis (T)")
    p.add_argument("--b-perp", type=float, help="transverse field magnitude (T)")
    p.add_argument("--magnitude", type=float, help="field magnitude (T), used with --theta")
    p.add_argument("--theta", type=float, default=0.0, help="polar angle in the defect frame (deg)")
    p.add_argument("--phi", type=float, default=0.0, help="azimuth (deg), bookkeeping only")
    p.add_argument("--b-lab", type=float, nargs=3, metavar=("BX", "BY", "BZ"), help="lab-frame field (T)")
    p.add_argument("--currents", type=float, nargs=3, metavar=("IX", "IY", "IZ"), help="coil currents (A)")
    p.add_argument("--emitter", help="emitter label for lab-frame fields (default: the model's)")


def cmd_eigen(args, config, out: Path):
    model = io.load_model(args.model)
    fld = _field_from_args(args, config, model)
    params = model.ground if args.manifold == "ground" else model.excited
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        energies = manifold_energies(params, fld, config.constants)
        h = build_full_hamiltonian(params, fld, args.basis, config.constants)
    report = {
        "manifold": args.manifold,
        "basis": args.basis,
        "field": {"b_par_T": fld.b_par, "b_perp_T": fld.b_perp, "theta_deg": fld.theta, "phi_deg": fld.phi},
        "energies_GHz": list(energies.energies),
        "hamiltonian_real_GHz": h.real.tolist(),
        "hamiltonian_imag_GHz": h.imag.tolist(),
        "warnings": [str(w.message) for w in caught],
    }
    io.write_json(report, out / "eigen.json")
    for w in report["warnings"]:
        print(f"warning: {w}")
    print(" ".join(f"{e:.9f}" for e in energies.energies))


def cmd_observables(args, config, out: Path):
    model = io.load_model(args.model)
    fld = _field_from_args(args, config, model)
    obs = observables(model, fld, config.constants)
    report = {
        "field": {"b_par_T": fld.b_par, "b_perp_T": fld.b_perp, "theta_deg": fld.theta, "phi_deg": fld.phi},
        "qubit_GHz": obs.qubit,
        "allowed_split_GHz": obs.allowed_split,
        "forbidden_split_GHz": obs.forbidden_split,
    }
    io.write_json(report, out / "observables.json")
    print(f"qubit={obs.qubit:.9f} allowed_split={obs.allowed_split:.9f} forbidden_split={obs.forbidden_split:.9f} GHz")


def cmd_rotmap(args, config, out: Path):
    model = io.load_model(args.model)
    if not args.step > 0:
        raise UsageError("--step must be positive")
    grid = DEFAULT_THETA_GRID if args.step == 2.0 else tuple(np.arange(0.0, 360.0, args.step))
    points = rotation_map(model, args.magnitude, args.plane, grid, config.constants)
    rows = [(p.theta, p.phi, p.observables.qubit, p.observables.allowed_split, p.observables.forbidden_split)
            for p in points]
    path = out / "rotmap.csv"
    io.write_csv(path, ["theta_deg", "phi_deg", "qubit_GHz", "allowed_split_GHz", "forbidden_split_GHz"], rows)
    print(f"wrote {len(rows)} points to {path}")


def _pipeline_config(config) -> PipelineConfig:
    return PipelineConfig(roles=config.roles, options=config.fit, constants=config.constants)


def cmd_fit(args, config, out: Path):
    datasets = io.load_pipeline_directory(args.pipeline)
    result = run_staged_pipeline(datasets, _pipeline_config(config))
    io.write_json(result.to_json_dict(), out / "fit_summary.json")
    (out / "fit_summary.txt").write_text(result.to_text(), encoding="utf-8")
    sys.stdout.write(result.to_text())
    for e, rms in sorted(result.holdout_rms.items()):
        print(f"holdout {e}: residual rms {rms * 1e3:.6f} MHz")


def cmd_uncertainty(args, config, out: Path):
    datasets = io.load_pipeline_directory(args.pipeline)
    rel = config.rel_error if args.rel_error is None else args.rel_error
    grid_n = config.grid_n if args.grid_n is None else args.grid_n
    jobs = args.jobs or config.jobs
    if rel < 0:
        raise UsageError("--rel-error must be non-negative")
    res = propagate_field_uncertainty(datasets, _pipeline_config(config), rel, grid_n, jobs)
    io.write_json(res.to_json_dict() | {"rel_error": rel, "grid_n": grid_n}, out / "uncertainty.json")
    for k, v in sorted(res.per_param_spread.items()):
        print(f"{k}: spread {v:.6g}")
    print(f"failed grid cells: {res.failures}")


def cmd_calibrate_field(args, config, out: Path):
    parsed = io.parse_dataset(args.trace, "echo")
    fit, corrected = calibrate(parsed.data, config.constants)
    spectrum = fft_spectrum(parsed.data)
    report = {
        "orientation": fit.orientation,
        "params": fit.params,
        "stderr": fit.stderr,
        "residual_rms": fit.residual_rms,
        "converged": fit.converged,
        "fft_seed_MHz": list(fit.fft_seed),
        "fft_peaks_MHz": [list(p) for p in spectrum.peaks[:5]],
        "bath_frequency_MHz": fit.frequency,
        "proximal_frequency_MHz": fit.proximal_frequency,
        "expected_larmor_MHz": corrected.expected_larmor,
        "b_nominal_T": parsed.data.b_nominal,
        "b_corrected_T": corrected.value,
        "b_corrected_uncertainty_T": corrected.uncertainty,
        "ratio": corrected.ratio,
    }
    io.write_json(report, out / "calibration.json")
    print(f"B_corrected = {corrected.value * 1e3:.4f} +- {corrected.uncertainty * 1e3:.4f} mT "
          f"(f = {fit.frequency:.6f} MHz, expected {corrected.expected_larmor:.6f} MHz)")


def cmd_fit_cpmg(args, config, out: Path):
    parsed = io.parse_dataset(args.data, "cpmg")
    xi = config.xi if args.xi is None else args.xi
    per_n, curves = [], []
    results = []
    for trace in parsed.data:
        norm = normalize_decay(trace)
        r = fit_stretched_exponential(norm, xi)
        results.append(r)
        per_n.append({"N": r.n_pulses, "T2_ms": r.t2, "T2_err_ms": r.t2_stderr, "A": r.amplitude,
                      "reliable": r.reliable, "message": r.message})
        for t, y in norm.points:
            curves.append((r.n_pulses, t, y, float(stretched_exponential(t, r.t2, r.amplitude, xi))))
    report = {"xi": xi, "per_N": per_n, "beta": None, "beta_err": None}
    if len({r.n_pulses for r in results}) >= 3:
        pl = fit_power_law(results)
        report.update(beta=pl.beta, beta_err=pl.beta_stderr, prefactor_ms=pl.prefactor)
    io.write_json(report, out / "cpmg.json")
    io.write_csv(out / "cpmg_curves.csv", ["n_pulses", "time_ms", "normalized", "fit"], curves)
    for row in per_n:
        print(f"N={row['N']}: T2 = {row['T2_ms']:.6g} ms, A = {row['A']:.4f}")
    if report["beta"] is not None:
        print(f"beta = {report['beta']:.4f} +- {report['beta_err']:.4f}")


def cmd_strain_map(args, config, out: Path):
    parsed = io.parse_dataset(args.grid, "strain_grid")
    rows = strain_map(parsed.data, DEFAULT_SUSCEPTIBILITIES)
    io.write_csv(out / "strain_map.csv", ["x_um", "y_um", "orientation", "gs_splitting_GHz", "zpl_shift_GHz"],
                 [(r.x_um, r.y_um, r.orientation, r.gs_splitting, r.zpl_shift) for r in rows])
    print(f"wrote {len(rows)} rows to {out / 'strain_map.csv'}")


def cmd_selftest(args, config, out: Path):
    checks = run_all(args.draws, args.seed)
    lines = [c.line() for c in checks]
    failures = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - failures} passed, {failures} failed")
    (out / "selftest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    if failures:
        raise FitError(f"selftest: {failures} check(s) failed")


def cmd_synth(args, config, out: Path):
    """Write the synthetic reference suite and models (labelled synthetic)."""
    suite = reference_suite(noise=args.noise, seed=args.seed)
    for emitter, datasets in sorted(suite.items()):
        note = {"source": "synthetic, generated from reference parameters"}
        if datasets[0].kind == "pl_splitting":
            ds = datasets[0]
            io.write_csv(out / f"snv{emitter}_pl.csv", ["theta_deg", "splitting_GHz"], list(ds.points),
                         {"kind": "pl", "emitter": emitter, **note})
        else:
            io.write_spectroscopy(datasets, out / f"snv{emitter}_rotmap.csv", note)
        io.save_model(reference_model(emitter), out / f"snv{emitter}.json")
    note = {"source": "synthetic"}
    taus = np.asarray(ECHO_TAUS_US)
    for orientation, params in (("parallel", ECHO_PARALLEL), ("perpendicular", ECHO_PERPENDICULAR)):
        rng = np.random.default_rng(args.seed)
        trace = synthetic_trace(orientation, params, taus, 0.1, args.echo_noise, rng)
        io.write_csv(out / "echo" / f"echo_{orientation}.csv", ["tau_us", "signal"], list(trace.points),
                     {"kind": "echo", "orientation": orientation, "b_nominal": "0.1", **note})
    io.write_csv(out / "cpmg" / "cpmg_suite.csv", ["n_pulses", "time_ms", "counts"], cpmg_rows(seed=args.seed),
                 {"kind": "cpmg", **note})
    grid = cut_strain_grid()
    io.write_csv(out / "strain" / "strain_cut.csv",
                 ["x_um", "y_um", "eps_xx", "eps_yy", "eps_zz", "eps_xy", "eps_yz", "eps_zx"],
                 [(x, y, e.xx, e.yy, e.zz, e.xy, e.yz, e.zx) for x, y, e in grid], {"kind": "strain_grid", **note})
    print(f"wrote synthetic suite for emitters {', '.join(sorted(suite))} to {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="SnV spin Hamiltonian modelling and spectroscopy fits.")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (default from config)")
    common.add_argument("--jobs", type=int, default=None, help="worker processes for parallel steps")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("eigen", parents=[common], help="manifold eigenvalues at one field")
    p.add_argument("--model", required=True)
    p.add_argument("--manifold", choices=("ground", "excited"), default="ground")
    p.add_argument("--basis", choices=("xy", "so"), default="xy")
    _add_field_args(p)
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("observables", parents=[common], help="qubit, allowed and forbidden splittings")
    p.add_argument("--model", required=True)
    _add_field_args(p)
    p.set_defaults(func=cmd_observables)

    p = sub.add_parser("rotmap", parents=[common], help="observables along a field rotation")
    p.add_argument("--model", required=True)
    p.add_argument("--plane", choices=("xy", "yz"), default="yz")
    p.add_argument("--magnitude", type=float, default=None,
                   help="field magnitude (T); default: the model's calibrated fields")
    p.add_argument("--step", type=float, default=2.0, help="angle step (deg)")
    p.set_defaults(func=cmd_rotmap)

    p = sub.add_parser("fit", parents=[common], help="staged fit over a directory of datasets")
    p.add_argument("--pipeline", required=True, help="directory of dataset CSV files")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("uncertainty", parents=[common], help="field-magnitude uncertainty grid")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--rel-error", type=float, default=None)
    p.add_argument("--grid-n", type=int, default=None)
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("calibrate-field", parents=[common], help="field from a Hahn-echo trace")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_calibrate_field)

    p = sub.add_parser("fit-cpmg", parents=[common], help="CPMG envelopes and T2(N) power law")
    p.add_argument("--data", required=True)
    p.add_argument("--xi", type=float, default=None, help="stretching factor (default 4)")
    p.set_defaults(func=cmd_fit_cpmg)

    p = sub.add_parser("strain-map", parents=[common], help="splitting and ZPL maps from a strain grid")
    p.add_argument("--grid", required=True)
    p.set_defaults(func=cmd_strain_map)

    p = sub.add_parser("selftest", parents=[common], help="closed-form versus numerical oracle checks")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic reference suite")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise on spectroscopy data (GHz)")
    p.add_argument("--echo-noise", type=float, default=0.0, help="Gaussian noise on echo traces")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def _fail(category: str, message: str, code: int) -> int:
    text = " ".join(str(message).split())
    if code == 2:
        print(f"{PROG}: usage-error: {text}", file=sys.stderr)
    else:
        print(f"{PROG}: error: {category}: {text}", file=sys.stderr)
    return code


def run_command(argv=None) -> int:
    """Parse ``argv`` and run one subcommand; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        config = io.load_config(args.config) if args.config else io.RunConfig()
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        out = Path(args.out or config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, config, out)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except io.DatasetError as exc:
        return _fail("data", str(exc), 1)
    except FitError as exc:
        return _fail("fit", str(exc), 1)
    except (ValueError, KeyError) as exc:
        return _fail("validation", exc.args[0] if exc.args else str(exc), 1)
    except OSError as exc:
        return _fail("io", str(exc), 1)
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
