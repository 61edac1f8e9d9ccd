from __future__ import annotations

import math

import pytest

from qmath.workbench.experiments import get_experiment
from qmath.workbench.walk import decay_taus, fit_decay_exponent


def gf_row(n: int, commutator: float, roundtrip: float, scale: float) -> dict:
    return {
        "N": n,
        "completeness_defect": 0.0,
        "min_eigenvalue": 0.0,
        "dilation_defect": math.nan,
        "dense_commutator": math.nan,
        "commutator": commutator,
        "roundtrip": roundtrip,
        "scale": scale,
    }


def test_gf_summary_accepts_decreasing_sweep() -> None:
    rows = [gf_row(4, 0.4, 0.2, 0.8), gf_row(6, 0.3, 0.15, 0.6), gf_row(8, 0.2, 0.1, 0.4)]
    summary, violations = get_experiment("gf-roundtrip").summarize(rows, {})
    assert violations == []
    assert summary["commutator"]["nonincreasing"]
    assert summary["commutator"]["constant"] == pytest.approx(0.5)
    assert summary["roundtrip"]["r2"] == pytest.approx(1.0)


def test_gf_summary_flags_increasing_values() -> None:
    rows = [gf_row(8, 0.5, 0.1, 0.4), gf_row(4, 0.4, 0.2, 0.8), gf_row(6, 0.3, 0.15, 0.6)]
    summary, violations = get_experiment("gf-roundtrip").summarize(rows, {})
    assert not summary["commutator"]["nonincreasing"]
    assert summary["roundtrip"]["nonincreasing"]
    assert any(v.startswith("commutator is not nonincreasing") for v in violations)


def test_gf_summary_flags_poor_fit() -> None:
    rows = [gf_row(4, 0.3, 0.2, 0.8), gf_row(6, 0.25, 0.15, 0.6), gf_row(8, 0.25, 0.1, 0.4)]
    summary, violations = get_experiment("gf-roundtrip").summarize(rows, {})
    assert summary["commutator"]["nonincreasing"]
    assert summary["commutator"]["r2"] < 0.8
    assert len(violations) == 1
    assert violations[0].startswith("commutator fit C (d eps)^(1/4) has R^2")


@pytest.mark.parametrize(
    ("value", "expected"),
    [
        (3, [2, 3, 4]),
        (9, [2, 3, 4]),
        (18, [2, 3, 4, 5, 6]),
        (math.inf, [2, 3, 4]),
    ],
)
def test_decay_taus(value: float, expected: list[int]) -> None:
    assert decay_taus(value) == expected


def test_fit_decay_exponent_window() -> None:
    taus = [2, 3, 4, 5, 6]
    values = [t**-0.25 if t <= 4 else 1e-9 for t in taus]
    assert fit_decay_exponent(taus, values, (2, 4)) == pytest.approx(0.25)
    assert fit_decay_exponent(taus, values) > 1
    assert math.isnan(fit_decay_exponent(taus, values, (2, 1)))


def test_walk_rows() -> None:
    experiment = get_experiment("walk-decay")
    assert experiment.columns == ("seed", "V", "d_g", "girth", "tau", "corr", "lambda2", "fit_exponent")

    params = {**experiment.defaults, "V": 60}
    rows = experiment.evaluate({"seed": 0}, params)
    assert [row["tau"] for row in rows] == decay_taus(rows[0]["girth"])
    assert all(set(row) == set(experiment.columns) for row in rows)

    summary, violations = experiment.summarize(rows, params)
    assert violations == []
    assert set(summary["exceeds_mixing_at_4"]) == {"0"}
    assert summary["exceeds_mixing_at_4"]["0"] == (rows[2]["corr"] > rows[2]["lambda2"] ** 4)
    assert set(summary["sweep_exponent"]) == {"0"}


def ab_row(n: int, resolved: bool, chern_out: int | None, constant: float) -> dict:
    return {
        "bundle": "test:1",
        "N": n,
        "epsilon": 0.3,
        "bound": 0.5,
        "resolved": resolved,
        "locality_constant": constant,
        "chern_in": 1,
        "chern_out": chern_out,
    }


def test_ab_summary() -> None:
    experiment = get_experiment("ab-roundtrip")
    assert experiment.defaults["radius"] == pytest.approx(math.pi / 4)
    assert experiment.defaults["N"] == [8, 12, 16]
    assert experiment.defaults["grid"] == 24

    rows = [ab_row(8, False, 0, 1.2), ab_row(12, True, 1, 0.4), ab_row(16, True, -1, math.nan)]
    summary, violations = experiment.summarize(rows, experiment.defaults)
    assert violations == ["test:1 N=16: Chern number 1 came back as -1"]
    assert summary["unresolved"] == ["test:1@8"]
    assert summary["locality_constant"] == pytest.approx(1.2)
