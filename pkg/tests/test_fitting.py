import random

import numpy as np
import pytest

from snvspin.constants import EMITTERS, LAMBDA_GROUND, QUENCHING
from snvspin.fitting import (
    FitError,
    FitOptions,
    FitStage,
    PipelineConfig,
    SpectroscopyDataset,
    fit_stage,
    model_from_dict,
    model_to_dict,
    perpendicular_qubit,
    propagate_field_uncertainty,
    run_staged_pipeline,
)
from snvspin.hamiltonian import ManifoldParams, SnVModel
from snvspin.synthetic import make_dataset, reference_model, reference_suite


def summary_values(result):
    return {r["parameter"]: r["value"] for r in result.summary}


def test_dataset_validation():
    with pytest.raises(ValueError, match="unknown dataset kind"):
        SpectroscopyDataset("A", "esr", ((0, 1),), 0.19)
    with pytest.raises(ValueError, match="no points"):
        SpectroscopyDataset("A", "odmr_qubit", (), 0.19)
    with pytest.raises(ValueError, match="non-finite"):
        SpectroscopyDataset("A", "odmr_qubit", ((0, np.nan),), 0.19)
    with pytest.raises(ValueError, match="field_magnitude"):
        SpectroscopyDataset("A", "odmr_qubit", ((0, 1),), 0.0)
    with pytest.raises(ValueError, match="plane"):
        SpectroscopyDataset("A", "odmr_qubit", ((0, 1),), 0.19, plane="xz")


def test_stage_lookup():
    assert FitStage.for_param("f32_g").dataset_kind == "odmr_qubit"
    assert FitStage.for_param("f32_g").fit_delta_theta
    assert not FitStage.for_param("upsilon_g").fit_delta_theta
    with pytest.raises(ValueError):
        FitStage.for_param("gamma_s")


def test_perpendicular_minimum_located():
    m = reference_model("B")
    q, offset = perpendicular_qubit(make_dataset(m, "odmr_qubit"))
    assert offset == pytest.approx(m.delta_theta, abs=1e-4)
    assert q > 0


def test_pipeline_round_trip(pipeline_result):
    v = summary_values(pipeline_result)
    assert v["lambda_g"] == pytest.approx(LAMBDA_GROUND, rel=1e-3)
    for p, ref in QUENCHING.items():
        assert v[p] == pytest.approx(ref, rel=1e-3), p
    for e in "ABC":
        assert v[f"upsilon_g[{e}]"] == pytest.approx(EMITTERS[e]["upsilon_g"], rel=1e-3)
        assert v[f"upsilon_u[{e}]"] == pytest.approx(EMITTERS[e]["upsilon_u"], rel=1e-3)
        assert v[f"delta_theta[{e}]"] == pytest.approx(EMITTERS[e]["delta_theta"], abs=1e-3)
    assert pipeline_result.holdout_rms["C"] < 1e-3


def test_roles_inferred_by_strain(pipeline_result):
    assert pipeline_result.roles == {"unstrained": "D", "low_strain": "A", "high_strain": "B", "holdout": ["C"]}
    stages = [s["stage"] for s in pipeline_result.stage_log]
    assert stages[0] == "lambda_g"
    assert {s["emitter"] for s in pipeline_result.stage_log if s["stage"] == "f12_g"} == {"B"}


def test_summary_text_has_every_row(pipeline_result):
    text = pipeline_result.to_text()
    assert len(text.strip().splitlines()) == len(pipeline_result.summary) + 2
    assert "f32_g" in text


def test_missing_dataset_aborts_with_stage(suite):
    broken = dict(suite)
    broken["A"] = [d for d in suite["A"] if d.kind != "allowed_split"]
    with pytest.raises(FitError, match="stage f32_u: missing allowed_split data for low-strain emitter 'A'"):
        run_staged_pipeline(broken, PipelineConfig(roles={"low_strain": "A", "high_strain": "B"}))


def test_missing_pl_aborts(suite):
    broken = {e: ds for e, ds in suite.items() if e != "D"}
    with pytest.raises(FitError, match="pl_splitting"):
        run_staged_pipeline(broken)


def test_refitting_frozen_parameter_raises():
    stage = FitStage.for_param("f32_g", frozen=["f32_g"])
    m = reference_model("A")
    with pytest.raises(FitError, match="frozen"):
        fit_stage(stage, make_dataset(m, "odmr_qubit"), m)


def test_stage_rejects_wrong_kind():
    m = reference_model("A")
    with pytest.raises(FitError, match="needs odmr_qubit"):
        fit_stage(FitStage.for_param("f32_g"), make_dataset(m, "allowed_split"), m)


def test_stage_changes_only_its_target():
    truth = reference_model("A")
    start = truth.with_params(f32_g=0.4)
    res = fit_stage(FitStage.for_param("f32_g"), make_dataset(truth, "odmr_qubit"), start)
    assert res.params.get_param("f32_g") == pytest.approx(0.268, rel=1e-6)
    for p in ("f32_u", "f12_g", "f12_u", "upsilon_g", "upsilon_u", "lambda_g"):
        assert res.params.get_param(p) == start.get_param(p)


def test_lambda_stage_recovers_pl_value():
    d = SpectroscopyDataset("D", "pl_splitting", ((0.0, 822.0),), 0.0)
    res = fit_stage(FitStage.for_param("lambda_g"), d, SnVModel(ManifoldParams(700.0)))
    assert res.params.ground.lam == pytest.approx(822.0, rel=1e-9)


def test_dataset_order_invariance(suite, pipeline_result):
    rng = random.Random(7)
    keys = list(suite)
    rng.shuffle(keys)
    shuffled = {k: list(reversed(suite[k])) for k in keys}
    again = run_staged_pipeline(shuffled)
    a, b = summary_values(pipeline_result), summary_values(again)
    assert a.keys() == b.keys()
    for k in a:
        assert b[k] == pytest.approx(a[k], rel=1e-8, abs=1e-10), k


def test_f_start_seed_skips_multistart(suite, pipeline_result):
    seed = {p: summary_values(pipeline_result)[p] for p in QUENCHING}
    res = run_staged_pipeline(suite, PipelineConfig(f_start=seed))
    for p in QUENCHING:
        assert summary_values(res)[p] == pytest.approx(seed[p], rel=1e-8)


def test_model_dict_round_trip():
    m = reference_model("B")
    assert model_from_dict(model_to_dict(m)) == m


def test_uncertainty_zero_rel_error_gives_zero_spread(suite):
    res = propagate_field_uncertainty(suite, rel_error=0.0, grid_n=2)
    assert res.failures == 0
    assert all(v == 0.0 for v in res.per_param_spread.values())
    assert len(res.scales) == 4


def test_uncertainty_argument_checks(suite):
    with pytest.raises(ValueError):
        propagate_field_uncertainty(suite, rel_error=-0.1)
    with pytest.raises(ValueError):
        propagate_field_uncertainty(suite, grid_n=1)


@pytest.mark.slow
def test_noisy_fit_stays_close():
    noisy = reference_suite(noise=1e-5, seed=4)
    res = run_staged_pipeline(noisy, PipelineConfig(options=FitOptions(refine_passes=5)))
    v = summary_values(res)
    assert v["f32_g"] == pytest.approx(0.268, rel=0.05)
