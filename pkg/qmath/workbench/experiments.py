"""Named experiments that run the library through its verification pipelines.

Every experiment expands its parameters into an ordered list of sweep points, evaluates each point into table rows
and condenses the rows into a summary together with the list of invariant violations. :func:`run_experiment` adds
the plumbing: a worker pool, a per-point checkpoint so that interrupted runs resume, and the CSV, summary and
manifest files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
from dataclasses import dataclass
from importlib import metadata
from itertools import islice
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable

import networkx as nx
import numpy as np
import scipy

from qmath.workbench.bundle import (
    ProjectorField,
    chern_number,
    field_symmetry_defect,
    make_test_bundle,
    map_A,
    map_A_symmetry_defect,
    map_B,
    strictly_localize,
)
from qmath.workbench.channels import (
    QubitDecodeChannel,
    complement_pair_check,
    default_grid,
    enumerate_monotone,
    haar_average_quadrature,
    matthew_check,
    mistake_rates,
)
from qmath.workbench.config import ExperimentConfig, canonical_json
from qmath.workbench.exceptions import (
    ConfigError,
    ConstantFunctionError,
    InvariantViolation,
    OutOfRegimeError,
    TooLargeError,
)
from qmath.workbench.linalg import operator_norm, rng_from
from qmath.workbench.mps import (
    build_expander_mps,
    connected_correlation,
    folded_transfer_spectrum,
    transfer_spectrum,
    two_interval_correlation,
)
from qmath.workbench.softtorus import (
    DilatedProjector,
    map_F,
    map_G,
    naimark_dilate,
    plaquette_phase,
    voiculescu_pair,
)
from qmath.workbench.symmetry import (
    SymmetryClass,
    max_defect,
    random_class_local_projector,
    random_class_torus,
    symmetric_map_F,
)
from qmath.workbench.walk import (
    balanced_signs,
    decay_taus,
    fit_decay_exponent,
    girth,
    random_regular_graph,
    second_eigenvalue,
    sign_observable,
    two_time_correlation,
)

if TYPE_CHECKING:
    from collections.abc import Iterator

log = logging.getLogger(__name__)

Row = dict[str, Any]
Point = dict[str, Any]

MATTHEW_CHUNK = 512
MIN_FIT_POINTS = 3
MIN_FIT_R2 = 0.8


@dataclass(frozen=True)
class Experiment:
    """A registered experiment.

    ``points(params, seed)`` lists the sweep points, ``evaluate(point, params)`` turns one point into rows and
    ``summarize(rows, params)`` returns the summary and the violated invariants. ``evaluate`` must be a module level
    function so that it can be shipped to pool workers.
    """

    name: str
    description: str
    defaults: dict[str, Any]
    columns: tuple[str, ...]
    points: Callable[[dict[str, Any], int], list[Point]]
    evaluate: Callable[[Point, dict[str, Any]], list[Row]]
    summarize: Callable[[list[Row], dict[str, Any]], tuple[dict[str, Any], list[str]]]


def _plain(value: Any) -> Any:
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def _row(**values: Any) -> Row:
    return {key: _plain(value) for key, value in values.items()}


def _hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = (g + g.conj().T) / 2
    return h / operator_norm(h)


def _seed_points(params: dict[str, Any], seed: int) -> list[Point]:
    return [{"seed": seed + i} for i in range(params["seeds"])]


def _finite_max(values: list[float]) -> float | None:
    values = [v for v in values if v is not None and math.isfinite(v)]
    return max(values) if values else None


# voiculescu


def _voiculescu_points(params: dict[str, Any], seed: int) -> list[Point]:
    return [{"N": n} for n in params["N"]]


def _voiculescu_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    n = point["N"]
    t = voiculescu_pair(n)
    u, v = t.unitaries
    phase = np.exp(2j * np.pi / n**2)

    group = v.conj().T @ u.conj().T @ v @ u
    group_defect = operator_norm(group - phase * np.eye(n * n))

    # both spectra are the N^2-th roots of unity, each once
    spectrum_defect = 0.0
    for w in (u, v):
        values = np.linalg.eigvals(w)
        index = np.mod(np.rint(np.angle(values) * n**2 / (2 * np.pi)).astype(int), n**2)
        if np.bincount(index, minlength=n**2).max() != 1:
            spectrum_defect = math.inf
            break
        spectrum_defect = max(spectrum_defect, float(np.abs(values - np.exp(2j * np.pi * index / n**2)).max()))

    return [
        _row(
            N=n,
            epsilon=t.measured_epsilon,
            expected=abs(phase - 1),
            group_commutator_defect=group_defect,
            spectrum_defect=spectrum_defect,
            plaquette_defect=float(np.abs(plaquette_phase(n) - phase).max()),
        )
    ]


def _voiculescu_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    violations = []
    for row in rows:
        n = row["N"]
        if abs(row["epsilon"] - row["expected"]) > 1e-10:
            violations.append(f"N={n}: commutator {row['epsilon']:.12g} differs from {row['expected']:.12g}")
        if row["group_commutator_defect"] > 1e-10:
            violations.append(f"N={n}: group commutator defect {row['group_commutator_defect']:.3e}")
        if row["spectrum_defect"] > 1e-8:
            violations.append(f"N={n}: spectrum defect {row['spectrum_defect']:.3e}")
        if row["plaquette_defect"] > 1e-10:
            violations.append(f"N={n}: plaquette defect {row['plaquette_defect']:.3e}")
    return {"commutator": {str(row["N"]): row["epsilon"] for row in rows}}, violations


# mps-decay


def _mps_decay_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    seed = point["seed"]
    k, d, n, p = params["k"], params["d"], params["N"], params["site"]
    chain = build_expander_mps(k, d, n, seed)
    op = transfer_spectrum(chain)
    hermitian_defect = float(np.abs(op.matrix_rep - op.matrix_rep.conj().T).max())

    rng = rng_from([seed, 1])
    rows = []
    for sep in params["separations"]:
        a, b = _hermitian(d, rng), _hermitian(d, rng)
        r = p + sep
        result = connected_correlation(chain, a, p, b, r)
        rows.append(
            _row(
                seed=seed,
                k=k,
                d=d,
                N=n,
                P=p,
                Q=p,
                R=r,
                S=r,
                sep=sep,
                value_re=result.value.real,
                value_im=result.value.imag,
                bound=result.bound,
                tail=result.tail,
                **{"lambda": result.lam},
                hermitian_defect=hermitian_defect,
            )
        )
    return rows


def _mps_decay_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    violations = []
    ratios = []
    for row in rows:
        where = f"seed={row['seed']} sep={row['sep']}"
        value = abs(complex(row["value_re"], row["value_im"]))
        allowance = row["bound"] + row["tail"]
        ratios.append(value / allowance if allowance > 0 else 0.0)
        if value > allowance:
            violations.append(f"{where}: |correlation| {value:.3e} exceeds {allowance:.3e}")
        if not row["lambda"] < 1:
            violations.append(f"{where}: transfer operator has no gap, lambda={row['lambda']:.12g}")
        if row["hermitian_defect"] > 1e-10:
            violations.append(f"{where}: transfer matrix Hermiticity defect {row['hermitian_defect']:.3e}")

    summary = {
        "max_lambda": max((row["lambda"] for row in rows), default=None),
        "max_ratio": max(ratios, default=None),
    }
    return summary, violations


# two-interval


def _two_interval_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    seed = point["seed"]
    k, d, n, p = params["k"], params["d"], params["N"], params["site"]
    chain = build_expander_mps(k, d, n, seed)
    folded = folded_transfer_spectrum(chain)

    rng = rng_from([seed, 2])
    rows = []
    for sep in params["separations"]:
        a, b = _hermitian(d, rng), _hermitian(d * d, rng)
        s1, r2 = p - sep, p + sep
        result = two_interval_correlation(chain, a, p, b, s1, r2)
        rows.append(
            _row(
                seed=seed,
                k=k,
                d=d,
                N=n,
                P=p,
                Q=p,
                R1=s1,
                S1=s1,
                R2=r2,
                S2=r2,
                sep=sep,
                value_re=result.value.real,
                value_im=result.value.imag,
                bound=result.bound,
                tail=result.tail,
                **{"lambda": result.lam},
                folded_lambda=result.folded_lambda,
                folded_distance=folded.distance,
            )
        )
    return rows


def _two_interval_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    violations = [
        f"seed={row['seed']}: folded spectrum differs from the product spectrum by {row['folded_distance']:.3e}"
        for row in rows
        if row["sep"] == params["separations"][0] and row["folded_distance"] > 1e-8
    ]
    exceeding = sum(
        abs(complex(row["value_re"], row["value_im"])) > row["bound"] + row["tail"] for row in rows
    )
    summary = {
        "max_folded_lambda": max((row["folded_lambda"] for row in rows), default=None),
        "max_folded_distance": max((row["folded_distance"] for row in rows), default=None),
        "exceeding_bound": exceeding,
    }
    return summary, violations


# walk-decay


def _walk_points(params: dict[str, Any], seed: int) -> list[Point]:
    return [{"seed": seed + i} for i in range(params["graphs"])]


def _walk_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    seed = point["seed"]
    v, degree = params["V"], params["degree"]
    graph = random_regular_graph(v, degree, seed)
    g = balanced_signs(v, rng_from([seed, 3]))
    cycle = girth(graph)
    lambda2 = second_eigenvalue(graph)

    taus = params["taus"] or decay_taus(cycle)
    if not all(isinstance(tau, int) and not isinstance(tau, bool) and tau >= 0 for tau in taus):
        raise ConfigError(f"taus must be nonnegative integers, got {taus!r}")

    correlations = [two_time_correlation(graph, sign_observable(graph, g, tau)) for tau in taus]
    exponent = fit_decay_exponent(taus, correlations, (2, cycle / 3))
    log.info("Graph seed %d: girth %s, lambda2 %.6f, fitted exponent %.4f", seed, cycle, lambda2, exponent)

    return [
        _row(
            seed=seed,
            V=v,
            d_g=degree,
            girth=cycle if math.isfinite(cycle) else -1,
            tau=tau,
            corr=corr,
            lambda2=lambda2,
            fit_exponent=exponent,
        )
        for tau, corr in zip(taus, correlations)
    ]


def _walk_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    violations = [
        f"seed={row['seed']} tau={row['tau']}: correlation {row['corr']:.3e} is negative"
        for row in rows
        if (row["girth"] < 0 or 3 * row["tau"] <= row["girth"]) and row["corr"] < -1e-12
    ]
    by_seed: dict[str, list[Row]] = {}
    for row in rows:
        by_seed.setdefault(str(row["seed"]), []).append(row)

    summary = {
        "fit_exponent": {seed: group[0]["fit_exponent"] for seed, group in by_seed.items()},
        "sweep_exponent": {
            seed: fit_decay_exponent([row["tau"] for row in group], [row["corr"] for row in group])
            for seed, group in by_seed.items()
        },
        "exceeds_mixing_at_4": {
            seed: row["corr"] > row["lambda2"] ** 4
            for seed, group in by_seed.items()
            for row in group
            if row["tau"] == 4
        },
    }
    return summary, violations


# gf-roundtrip


def _gf_points(params: dict[str, Any], seed: int) -> list[Point]:
    return [{"N": n} for n in params["N"]]


def _gf_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    n = point["N"]
    t = voiculescu_pair(n)
    delta = params["delta"] or None
    out = map_F(t, delta, params["window"])
    if not isinstance(out, DilatedProjector):
        raise InvariantViolation(f"N={n}: Voiculescu pair was embedded trivially")

    povm = out.povm
    dense_epsilon = dilation_defect = math.nan
    if out.dim <= params["max_dense"]:
        try:
            dense_epsilon = out.dense().measured_epsilon
            dilation = naimark_dilate(povm)
            dilation_defect = max(
                operator_norm(dilation.restricted(i) - povm.element(o)) for i, o in enumerate(povm.outcomes())
            )
        except TooLargeError:
            log.info("N=%d: dilation space of dimension %d not materialized", n, out.dim)

    back = map_G(out)
    roundtrip = max(operator_norm(a - b) for a, b in zip(back.unitaries, t.unitaries))
    return [
        _row(
            N=n,
            dim=t.dim,
            outcomes=povm.count,
            delta=povm.delta,
            epsilon_in=t.measured_epsilon,
            completeness_defect=povm.completeness_defect(),
            min_eigenvalue=povm.min_eigenvalue(),
            dilation_defect=dilation_defect,
            commutator=out.epsilon,
            dense_commutator=dense_epsilon,
            roundtrip=roundtrip,
            scale=(t.d * t.measured_epsilon) ** 0.25,
        )
    ]


def _fit_through_origin(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least squares ``y ~ C x`` with its coefficient of determination."""
    c = float(np.dot(x, y) / np.dot(x, x))
    total = float(np.sum((y - y.mean()) ** 2))
    residual = float(np.sum((y - c * x) ** 2))
    return c, (1.0 - residual / total) if total > 0 else 1.0


def _gf_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    violations = []
    for row in rows:
        n = row["N"]
        if row["completeness_defect"] > 1e-10:
            violations.append(f"N={n}: POVM completeness defect {row['completeness_defect']:.3e}")
        if row["min_eigenvalue"] < -1e-10:
            violations.append(f"N={n}: POVM element with eigenvalue {row['min_eigenvalue']:.3e}")
        if math.isfinite(row["dilation_defect"]) and row["dilation_defect"] > 1e-10:
            violations.append(f"N={n}: dilation defect {row['dilation_defect']:.3e}")
        if math.isfinite(row["dense_commutator"]) and abs(row["dense_commutator"] - row["commutator"]) > 1e-9:
            violations.append(
                f"N={n}: compressed commutator {row['commutator']:.12g} and dense {row['dense_commutator']:.12g}"
            )

    ordered = sorted(rows, key=lambda row: row["N"])
    scale = np.array([row["scale"] for row in ordered])
    summary: dict[str, Any] = {}
    for key in ("commutator", "roundtrip"):
        values = np.array([row[key] for row in ordered])
        c, r2 = _fit_through_origin(scale, values) if len(values) else (math.nan, math.nan)
        nonincreasing = bool(np.all(np.diff(values) <= 1e-12))
        summary[key] = {
            "constant": c,
            "max_constant": float((values / scale).max()) if len(values) else None,
            "r2": r2,
            "nonincreasing": nonincreasing,
        }
        if not nonincreasing:
            violations.append(f"{key} is not nonincreasing in N: {', '.join(f'{v:.6g}' for v in values)}")
        if len(values) >= MIN_FIT_POINTS and r2 < MIN_FIT_R2:
            violations.append(f"{key} fit C (d eps)^(1/4) has R^2 = {r2:.4f} < {MIN_FIT_R2}")
    return summary, violations


# ab-roundtrip and full-pipeline-chern


def _parse_bundle(text: str, params: dict[str, Any]) -> ProjectorField:
    kind, _, value = text.partition(":")
    try:
        number = int(value)
    except ValueError:
        raise ConfigError(f"Bundle must be test:<c> or from-voiculescu:<N>, got {text!r}")

    if kind == "test":
        return make_test_bundle(number)
    if kind == "from-voiculescu":
        return map_B(map_F(voiculescu_pair(number)), params["radius"], params["grid"], validate=False)
    raise ConfigError(f"Unknown bundle kind {kind!r}, expected test or from-voiculescu")


def _ab_points(params: dict[str, Any], seed: int) -> list[Point]:
    return [{"bundle": bundle, "N": n} for bundle in params["bundle"] for n in params["N"]]


def _ab_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    n = point["N"]
    field = _parse_bundle(point["bundle"], params)
    cls = SymmetryClass.parse(params["symmetry"])
    radius, m = params["radius"], params["grid"]
    # neighbouring grid points are 2 pi / N apart; at radius R or more their coupling is filtered out
    resolved = 2 * np.pi / n < radius

    lipschitz = field.lipschitz()
    discrete = map_A(field, n)
    epsilon = discrete.measured_epsilon
    chern_in = chern_number(field, m)
    h = strictly_localize(discrete, radius)
    try:
        chern_out = chern_number(map_B(discrete, radius, m, validate=False), m)
    except OutOfRegimeError:
        if resolved:
            raise
        log.info("%s N=%d: grid is coarser than the locality radius and the gap closes", point["bundle"], n)
        chern_out = None

    field_defect = map_a_defect = math.nan
    if cls.is_constrained:
        field_defect = field_symmetry_defect(field, cls)
        map_a_defect = map_A_symmetry_defect(field, n)

    return [
        _row(
            bundle=point["bundle"],
            N=n,
            dim=discrete.dim,
            epsilon=epsilon,
            lipschitz=lipschitz,
            bound=2 * np.pi * lipschitz / n,
            resolved=resolved,
            localization_error=h.error,
            locality_constant=h.error * h.cutoff / epsilon if epsilon > 0 else math.nan,
            chern_in=chern_in,
            chern_out=chern_out,
            field_symmetry_defect=field_defect,
            map_A_symmetry_defect=map_a_defect,
        )
    ]


def _ab_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    violations = []
    for row in rows:
        where = f"{row['bundle']} N={row['N']}"
        if row["epsilon"] > row["bound"] + 1e-12:
            violations.append(f"{where}: commutator {row['epsilon']:.6g} exceeds 2 pi K / N = {row['bound']:.6g}")
        if row["resolved"] and row["chern_out"] != row["chern_in"]:
            violations.append(f"{where}: Chern number {row['chern_in']} came back as {row['chern_out']}")
    summary = {
        "chern": {f"{row['bundle']}@{row['N']}": row["chern_out"] for row in rows},
        "unresolved": [f"{row['bundle']}@{row['N']}" for row in rows if not row["resolved"]],
        "locality_constant": _finite_max([row["locality_constant"] for row in rows]),
    }
    return summary, violations


def _pipeline_points(params: dict[str, Any], seed: int) -> list[Point]:
    return [{"N": n} for n in params["N"]]


def _pipeline_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    n = point["N"]
    t = voiculescu_pair(n)
    local = map_F(t)
    field = map_B(local, params["radius"], params["grid"], validate=params["validate"])
    chern = chern_number(field, params["grid"])
    log.info("Voiculescu N=%d: Chern number %d", n, chern)
    return [
        _row(
            N=n,
            epsilon_in=t.measured_epsilon,
            dilation_dim=local.dim,
            commutator=local.epsilon,
            rank=field.rank,
            chern=chern,
        )
    ]


def _pipeline_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    violations = [f"N={row['N']}: Chern number {row['chern']}, expected +-1" for row in rows if abs(row["chern"]) != 1]
    return {"chern": {str(row["N"]): row["chern"] for row in rows}}, violations


# symmetry-pipeline


def _symmetry_points(params: dict[str, Any], seed: int) -> list[Point]:
    points = []
    for name in params["symmetry"]:
        if not SymmetryClass.parse(name).is_constrained:
            raise ConfigError("The symmetry pipeline needs a constrained class, symmetric or selfdual")
        points.extend({"symmetry": name, "seed": seed + i} for i in range(params["seeds"]))
    return points


def _symmetry_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    cls = SymmetryClass.parse(point["symmetry"])
    seed = point["seed"]
    dim, d = params["dim"], params["d"]

    torus = random_class_torus(cls, dim, d, params["strength"], seed)
    local = symmetric_map_F(torus, cls)
    try:
        roundtrip_defect = max_defect(map_G(local).unitaries, cls)
    except OutOfRegimeError as e:
        log.info("Seed %d: map_G skipped, %s", seed, e)
        roundtrip_defect = None

    projector = random_class_local_projector(cls, dim, d, params["rank"], params["strength"], seed)
    try:
        map_G_defect = max_defect(map_G(projector).unitaries, cls)
    except OutOfRegimeError as e:
        log.info("Seed %d: map_G of the class projector skipped, %s", seed, e)
        map_G_defect = None

    return [
        _row(
            symmetry=cls.tag.value,
            seed=seed,
            dim=dim,
            epsilon=torus.measured_epsilon,
            torus_defect=max_defect(torus.unitaries, cls),
            map_F_defect=max_defect([*local.unitaries, local.projector], local.symmetry),
            roundtrip_defect=roundtrip_defect,
            projector_defect=max_defect([*projector.unitaries, projector.projector], cls),
            map_G_defect=map_G_defect,
        )
    ]


SYMMETRY_DEFECTS = ("torus_defect", "map_F_defect", "roundtrip_defect", "projector_defect", "map_G_defect")


def _symmetry_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    violations = [
        f"{row['symmetry']} seed={row['seed']}: {key} {row[key]:.3e}"
        for row in rows
        for key in SYMMETRY_DEFECTS
        if row[key] is not None and row[key] > 1e-8
    ]
    summary = {
        name: _finite_max([row[key] for row in rows if row["symmetry"] == name for key in SYMMETRY_DEFECTS])
        for name in sorted({row["symmetry"] for row in rows})
    }
    skipped = sum(1 for row in rows for key in ("roundtrip_defect", "map_G_defect") if row[key] is None)
    return {"max_defect": summary, "out_of_regime": skipped}, violations


# matthew


def _matthew_points(params: dict[str, Any], seed: int) -> list[Point]:
    total = sum(1 for _ in enumerate_monotone(params["n"]))
    return [{"start": start} for start in range(0, total, MATTHEW_CHUNK)]


def _matthew_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    n = params["n"]
    grid = default_grid(params["grid_step"])
    rows = []
    for fn in islice(enumerate_monotone(n), point["start"], point["start"] + MATTHEW_CHUNK):
        complement = complement_pair_check(fn, grid)
        try:
            report = matthew_check(fn, grid)
        except ConstantFunctionError:
            status, min_ratio, corollary = "skipped-constant", math.nan, True
        else:
            status = "pass" if report.passed else "fail"
            min_ratio, corollary = report.min_ratio, report.corollary_holds

        rows.append(
            _row(
                n=n,
                function_id=fn.function_id,
                status=status,
                min_ratio=min_ratio,
                corollary=corollary,
                complement_pair=complement.has_complementary_pair,
                max_complement_sum=complement.max_sum,
                no_cloning="" if complement.inequality_holds is None else complement.inequality_holds,
                dominated="" if complement.dominated is None else complement.dominated,
            )
        )
    return rows


def _matthew_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    counts = {status: sum(row["status"] == status for row in rows) for status in ("pass", "fail", "skipped-constant")}
    violations = []
    for row in rows:
        fid = f"{row['function_id']:#x}"
        if row["status"] == "fail":
            violations.append(f"{fid}: log-derivative ratio drops to {row['min_ratio']:.12g}")
        if not row["corollary"]:
            violations.append(f"{fid}: f(p) > p at some p <= 1/2 without f(p) + f(1 - p) > 1")
        if row["no_cloning"] is False:
            violations.append(f"{fid}: f(p) + f(1 - p) reaches {row['max_complement_sum']:.12g} without a pair")
        if row["dominated"] is False:
            violations.append(f"{fid}: f(p) > p at some p <= 1/2 without a complementary pair")
    summary = {"monotone": len(rows), **counts, "with_complementary_pair": sum(row["complement_pair"] for row in rows)}
    return summary, violations


# channel-bounds


def _channel_points(params: dict[str, Any], seed: int) -> list[Point]:
    fixtures = [{"kind": "identity", "seed": -1}, {"kind": "mixed", "seed": -1}]
    return fixtures + [{"kind": "random", "seed": seed + i} for i in range(params["channels"])]


def _channel_evaluate(point: Point, params: dict[str, Any]) -> list[Row]:
    kind = point["kind"]
    if kind == "identity":
        dec = QubitDecodeChannel.identity()
    elif kind == "mixed":
        dec = QubitDecodeChannel.to_mixed()
    else:
        dec = QubitDecodeChannel.random(point["seed"], params["rank"])

    rates = mistake_rates(dec, grid=params["grid"], levels=params["levels"])
    quadrature = haar_average_quadrature(dec, params["nodes"])
    return [
        _row(
            kind=kind,
            seed=point["seed"],
            average=rates.average,
            maximum=rates.maximum,
            ratio=rates.ratio,
            quadrature_defect=abs(quadrature - rates.average),
        )
    ]


FIXTURE_RATES = {"identity": 0.0, "mixed": 0.5}


def _channel_summarize(rows: list[Row], params: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    violations = []
    for row in rows:
        where = f"{row['kind']} seed={row['seed']}"
        if row["maximum"] < row["average"] - 1e-9 or row["maximum"] > 4 * row["average"] + 1e-12:
            violations.append(f"{where}: E_max={row['maximum']:.6g} outside [E_av, 4 E_av], E_av={row['average']:.6g}")
        if row["quadrature_defect"] > 1e-4:
            violations.append(f"{where}: quadrature differs from the exact average by {row['quadrature_defect']:.3e}")
        expected = FIXTURE_RATES.get(row["kind"])
        if expected is not None and max(abs(row["average"] - expected), abs(row["maximum"] - expected)) > 1e-6:
            violations.append(f"{where}: rates ({row['average']:.6g}, {row['maximum']:.6g}), expected {expected}")

    ratios = [row["ratio"] for row in rows if row["kind"] == "random"]
    return {"max_ratio": _finite_max(ratios), "channels": len(ratios)}, violations


REGISTRY: dict[str, Experiment] = {
    e.name: e
    for e in (
        Experiment(
            "voiculescu",
            "Commutator, group commutator, spectra and plaquette phases of the Voiculescu pair",
            {"N": [2, 3, 4, 5, 6, 7, 8]},
            ("N", "epsilon", "expected", "group_commutator_defect", "spectrum_defect", "plaquette_defect"),
            _voiculescu_points,
            _voiculescu_evaluate,
            _voiculescu_summarize,
        ),
        Experiment(
            "mps-decay",
            "Connected correlators of expander chains against the transfer operator decay bound",
            {"k": 16, "d": 4, "N": 20, "seeds": 20, "separations": [1, 2, 3, 4, 5, 6, 7, 8], "site": 6},
            (
                "seed", "k", "d", "N", "P", "Q", "R", "S", "sep",
                "value_re", "value_im", "bound", "tail", "lambda", "hermitian_defect",
            ),  # fmt: skip
            _seed_points,
            _mps_decay_evaluate,
            _mps_decay_summarize,
        ),
        Experiment(
            "two-interval",
            "Correlators with an operator split over two intervals and the folded transfer spectrum",
            {"k": 4, "d": 4, "N": 16, "seeds": 5, "separations": [1, 2, 3, 4], "site": 8},
            (
                "seed", "k", "d", "N", "P", "Q", "R1", "S1", "R2", "S2", "sep",
                "value_re", "value_im", "bound", "tail", "lambda", "folded_lambda", "folded_distance",
            ),  # fmt: skip
            _seed_points,
            _two_interval_evaluate,
            _two_interval_summarize,
        ),
        Experiment(
            "walk-decay",
            "Two-time correlations of random walks on random regular graphs",
            {"V": 2000, "degree": 3, "graphs": 1, "taus": []},
            ("seed", "V", "d_g", "girth", "tau", "corr", "lambda2", "fit_exponent"),
            _walk_points,
            _walk_evaluate,
            _walk_summarize,
        ),
        Experiment(
            "gf-roundtrip",
            "map_F on Voiculescu pairs: POVM checks, commutators of the dilation and the map_G round trip",
            {"N": [4, 6, 8], "delta": 0.0, "window": "bump", "max_dense": 4000},
            (
                "N", "dim", "outcomes", "delta", "epsilon_in", "completeness_defect", "min_eigenvalue",
                "dilation_defect", "commutator", "dense_commutator", "roundtrip", "scale",
            ),  # fmt: skip
            _gf_points,
            _gf_evaluate,
            _gf_summarize,
        ),
        Experiment(
            "ab-roundtrip",
            "Chern numbers of bundles through map_A and map_B, with the map_A commutator bound",
            {
                "bundle": ["test:-1", "test:0", "test:1"],
                "N": [8, 12, 16],
                "radius": math.pi / 4,
                "grid": 24,
                "symmetry": "none",
            },
            (
                "bundle", "N", "dim", "epsilon", "lipschitz", "bound", "resolved", "localization_error",
                "locality_constant", "chern_in", "chern_out", "field_symmetry_defect", "map_A_symmetry_defect",
            ),  # fmt: skip
            _ab_points,
            _ab_evaluate,
            _ab_summarize,
        ),
        Experiment(
            "full-pipeline-chern",
            "Voiculescu pair through map_F and map_B to a bundle with nonzero Chern number",
            {"N": [6, 8], "radius": math.pi / 2, "grid": 8, "validate": False},
            ("N", "epsilon_in", "dilation_dim", "commutator", "rank", "chern"),
            _pipeline_points,
            _pipeline_evaluate,
            _pipeline_summarize,
        ),
        Experiment(
            "symmetry-pipeline",
            "Class defects of symmetric and self-dual instances through map_F and map_G",
            {"symmetry": ["symmetric", "selfdual"], "seeds": 10, "dim": 6, "d": 2, "rank": 2, "strength": 0.1},
            ("symmetry", "seed", "dim", "epsilon", *SYMMETRY_DEFECTS),
            _symmetry_points,
            _symmetry_evaluate,
            _symmetry_summarize,
        ),
        Experiment(
            "matthew",
            "Log-derivative bound and no-cloning constraint over all monotone Boolean functions on n bits",
            {"n": 4, "grid_step": 0.02},
            (
                "n", "function_id", "status", "min_ratio", "corollary", "complement_pair",
                "max_complement_sum", "no_cloning", "dominated",
            ),  # fmt: skip
            _matthew_points,
            _matthew_evaluate,
            _matthew_summarize,
        ),
        Experiment(
            "channel-bounds",
            "Average and maximum mistake rates of qubit decoders",
            {"channels": 100, "rank": 3, "grid": 100, "levels": 3, "nodes": 316},
            ("kind", "seed", "average", "maximum", "ratio", "quadrature_defect"),
            _channel_points,
            _channel_evaluate,
            _channel_summarize,
        ),
    )
}


def get_experiment(name: str) -> Experiment:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"Unknown experiment {name!r}, choose from: {', '.join(sorted(REGISTRY))}")


def _run_point(task: tuple[str, int, Point, dict[str, Any]]) -> tuple[int, list[Row]]:
    name, index, point, params = task
    return index, REGISTRY[name].evaluate(point, params)


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


@dataclass
class RunResult:
    """Outcome of :func:`run_experiment`; ``violations`` lists the invariants that failed."""

    config: ExperimentConfig
    rows: list[Row]
    summary: dict[str, Any]
    violations: list[str]
    csv_path: Path
    summary_path: Path
    manifest_path: Path


class Checkpoint:
    """Append-only record of finished sweep points, one JSON line each.

    Lines written for a different configuration digest are ignored, so changing a parameter restarts the sweep.
    """

    def __init__(self, path: Path, digest: str):
        self.path = path
        self.digest = digest

    def load(self) -> dict[int, list[Row]]:
        done = {}
        if not self.path.exists():
            return done
        with self.path.open() as fh:
            for line in fh:
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    log.warning("Ignoring truncated checkpoint line in %s", self.path)
                    continue
                if entry.get("digest") == self.digest:
                    done[entry["index"]] = entry["rows"]
        return done

    def append(self, index: int, rows: list[Row]) -> None:
        with self.path.open("a") as fh:
            fh.write(canonical_json({"digest": self.digest, "index": index, "rows": rows}) + "\n")


def _evaluate_points(
    experiment: Experiment, cfg: ExperimentConfig, pending: list[tuple[int, Point]]
) -> Iterator[tuple[int, list[Row]]]:
    tasks = [(experiment.name, index, point, cfg.params) for index, point in pending]
    if cfg.workers <= 1 or len(tasks) <= 1:
        yield from map(_run_point, tasks)
        return

    with multiprocessing.Pool(min(cfg.workers, len(tasks))) as pool:
        yield from pool.imap(_run_point, tasks)


def _version() -> str:
    try:
        return metadata.version("qmath.workbench")
    except metadata.PackageNotFoundError:
        return "unknown"


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Run every sweep point of an experiment and write ``<name>.csv``, ``<name>.json`` and ``<name>.manifest.json``.

    Finished points are taken from ``<name>.checkpoint.jsonl`` when its digest matches the configuration. Rows are
    written in sweep order whatever the pool width. Failed invariants raise :class:`InvariantViolation` after all
    files have been written.
    """
    experiment = get_experiment(cfg.experiment)
    points = experiment.points(cfg.params, cfg.seed)
    cfg.output.mkdir(parents=True, exist_ok=True)

    checkpoint = Checkpoint(cfg.output / f"{experiment.name}.checkpoint.jsonl", cfg.digest)
    results = checkpoint.load()
    pending = [(i, point) for i, point in enumerate(points) if i not in results]
    log.info("%s: %d sweep points, %d from checkpoint", experiment.name, len(points), len(points) - len(pending))

    for index, rows in _evaluate_points(experiment, cfg, pending):
        checkpoint.append(index, rows)
        results[index] = rows
        log.info("%s: finished point %d/%d", experiment.name, index + 1, len(points))

    rows = [row for i in range(len(points)) for row in results[i]]
    summary, violations = experiment.summarize(rows, cfg.params)

    csv_path = cfg.output / f"{experiment.name}.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(experiment.columns)
        writer.writerows([_format(row[c]) for c in experiment.columns] for row in rows)

    summary_path = cfg.output / f"{experiment.name}.json"
    payload = {
        "experiment": experiment.name,
        "digest": cfg.digest,
        "rows": len(rows),
        "violations": violations,
        **summary,
    }
    summary_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    manifest_path = cfg.output / f"{experiment.name}.manifest.json"
    manifest = {
        "config": cfg.to_json(),
        "digest": cfg.digest,
        "version": _version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "networkx": nx.__version__,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    result = RunResult(cfg, rows, summary, violations, csv_path, summary_path, manifest_path)
    if violations:
        for v in violations:
            log.error("%s: %s", experiment.name, v)
        raise InvariantViolation(f"{experiment.name}: {len(violations)} invariant violations, first: {violations[0]}")
    return result
