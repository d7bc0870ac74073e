import math

import pytest

from src.validator import (
    CRITERIA,
    AcceptanceReportModel,
    Comparison,
    Measurement,
    acceptance_schema,
    format_acceptance_report,
    run_acceptance,
)


def test_measurement_comparisons():
    assert Measurement("a", 1.05, 1.0, 0.1).passed
    assert not Measurement("a", 1.2, 1.0, 0.1).passed
    assert Measurement("r", 105.0, 100.0, 0.1, Comparison.RELATIVE).passed
    assert Measurement("min", -1e-12, 0.0, 1e-9, Comparison.AT_LEAST).passed
    assert not Measurement("min", -1e-6, 0.0, 1e-9, Comparison.AT_LEAST).passed
    assert Measurement("max", 0.5, 1.0, 0.0, Comparison.AT_MOST).passed


def test_negative_tolerance_and_nan_never_pass():
    assert not Measurement("a", 1.0, 1.0, -0.1).passed
    assert not Measurement("a", math.nan, 1.0, 1.0).passed
    assert not Measurement("a", 1.0, 1.0, -1.0, Comparison.AT_LEAST).passed


def test_registry_is_complete():
    assert sorted(CRITERIA) == list(range(1, 12))


def test_quick_criteria_pass():
    report = run_acceptance(criteria=[2, 11], quick=True)
    assert report.all_passed, format_acceptance_report(report)
    assert [c.id for c in report.criteria] == [2, 11]


def test_injected_failure_is_detected():
    report = run_acceptance(criteria=[11], quick=True, inject_failure=11)
    assert not report.all_passed
    assert report.failed[0].id == 11
    assert "tolerance injection" in report.criteria[0].detail


def test_unknown_criterion():
    with pytest.raises(ValueError):
        run_acceptance(criteria=[42])
    with pytest.raises(ValueError):
        run_acceptance(criteria=[1], inject_failure=42)


def test_report_serialization():
    report = run_acceptance(criteria=[11], quick=True)
    data = report.to_dict()
    assert AcceptanceReportModel.model_validate(data).all_passed
    assert data["criteria"][0]["measurements"][0]["comparison"] == "absolute"
    assert "criteria" in acceptance_schema()["properties"]
    text = format_acceptance_report(report)
    assert "Status: PASS" in text
    assert "Criteria passed: 1/1" in text


@pytest.mark.slow
def test_quick_battery_passes():
    report = run_acceptance(quick=True)
    assert report.all_passed, format_acceptance_report(report)


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_every_criterion_can_fail(number):
    report = run_acceptance(criteria=[number], quick=True, inject_failure=number)
    assert not report.all_passed


def test_entangled_ratio_is_computed_past_the_sweep():
    report = run_acceptance(criteria=[5], quick=True)
    assert report.all_passed, format_acceptance_report(report)
    by_label = {m.label: m for m in report.criteria[0].measurements}
    numeric = by_label["J2/J1 at t = 3.5"]
    assert numeric.comparison is Comparison.RELATIVE
    assert numeric.passed
    assert "J2/J1 at t = 10 (closed form)" in by_label
