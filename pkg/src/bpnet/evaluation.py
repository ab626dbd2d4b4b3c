"""Blood-pressure value extraction and the clinical grading standards.

SBP/MAP/DBP are the max/mean/min of each 10-second episode. The BHS grade
comes from cumulative percentages of absolute errors under 5/10/15 mmHg
(strict '<' at each bin edge); the AAMI verdict from mean error and the
population standard deviation of signed errors, applicable from 85 subjects.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from . import network as net
from .errors import UsageError

__all__ = [
    "BpTriple",
    "ErrorSeries",
    "BhsThresholds",
    "AamiCriteria",
    "QuantityReport",
    "EvalReport",
    "extract_bp",
    "mae",
    "cumulative_pct",
    "bhs_grade",
    "aami_check",
    "evaluate",
    "render_report",
    "report_lines",
]

QUANTITIES = ("sbp", "map", "dbp")


@dataclass(frozen=True)
class BpTriple:
    sbp: float
    map: float
    dbp: float


def extract_bp(abp: np.ndarray) -> BpTriple:
    """Episode-level pressures: max (systolic), mean, min (diastolic)."""
    v = np.asarray(abp, dtype=np.float64)
    if v.size == 0:
        raise UsageError("cannot extract blood pressure from an empty vector")
    return BpTriple(sbp=float(v.max()), map=float(v.mean()), dbp=float(v.min()))


@dataclass
class ErrorSeries:
    """Signed per-episode errors (predicted - ground truth) in mmHg."""

    errors: np.ndarray

    def __post_init__(self) -> None:
        self.errors = np.asarray(self.errors, dtype=np.float64)
        if self.errors.ndim != 1 or self.errors.size < 1:
            raise UsageError("error series needs at least one value")

    @property
    def n(self) -> int:
        return self.errors.size


def mae(series: ErrorSeries) -> float:
    return float(np.mean(np.abs(series.errors)))


def mean_error(series: ErrorSeries) -> float:
    return float(np.mean(series.errors))


def error_sd(series: ErrorSeries) -> float:
    # population form (divide by N), pinned for determinism
    return float(np.std(series.errors))


@dataclass(frozen=True)
class BhsThresholds:
    bins: tuple[float, float, float] = (5.0, 10.0, 15.0)
    grade_a: tuple[float, float, float] = (60.0, 85.0, 95.0)
    grade_b: tuple[float, float, float] = (50.0, 75.0, 90.0)
    grade_c: tuple[float, float, float] = (40.0, 65.0, 85.0)


def cumulative_pct(
    series: ErrorSeries, bins: tuple[float, float, float] = (5.0, 10.0, 15.0)
) -> tuple[float, float, float]:
    """Percentage of absolute errors strictly under each bin edge."""
    a = np.abs(series.errors)
    return tuple(float(np.mean(a < b) * 100.0) for b in bins)


def bhs_grade(pcts: tuple[float, float, float], t: BhsThresholds | None = None) -> str:
    """Highest grade whose floors are met in every bin; 'D' if none."""
    t = t or BhsThresholds()
    for grade, floors in (("A", t.grade_a), ("B", t.grade_b), ("C", t.grade_c)):
        if all(p >= f for p, f in zip(pcts, floors)):
            return grade
    return "D"


@dataclass(frozen=True)
class AamiCriteria:
    me_limit: float = 5.0
    sd_limit: float = 8.0
    min_subjects: int = 85


def aami_check(
    series: ErrorSeries, n_subjects: int, criteria: AamiCriteria | None = None
) -> str:
    """'pass' / 'fail' on |ME| and SD limits; 'not-applicable' under 85 subjects."""
    c = criteria or AamiCriteria()
    if n_subjects < c.min_subjects:
        return "not-applicable"
    ok = abs(mean_error(series)) <= c.me_limit and error_sd(series) <= c.sd_limit
    return "pass" if ok else "fail"


@dataclass
class QuantityReport:
    mae: float
    me: float
    sd: float
    cumulative: tuple[float, float, float]
    bhs: str
    aami: str


@dataclass
class EvalReport:
    quantities: dict[str, QuantityReport]
    n_episodes: int
    n_subjects: int


def _series_report(series: ErrorSeries, n_subjects: int) -> QuantityReport:
    pcts = cumulative_pct(series)
    return QuantityReport(
        mae=mae(series),
        me=mean_error(series),
        sd=error_sd(series),
        cumulative=pcts,
        bhs=bhs_grade(pcts),
        aami=aami_check(series, n_subjects),
    )


def report_from_triples(
    predicted: list[BpTriple], truth: list[BpTriple], n_subjects: int
) -> EvalReport:
    if len(predicted) != len(truth) or not predicted:
        raise UsageError("need matching, nonempty prediction/truth triples")
    quantities = {}
    for q in QUANTITIES:
        errs = np.array([getattr(p, q) - getattr(t, q) for p, t in zip(predicted, truth)])
        quantities[q] = _series_report(ErrorSeries(errs), n_subjects)
    return EvalReport(quantities=quantities, n_episodes=len(predicted), n_subjects=n_subjects)


def evaluate(
    p: net.ParameterSet,
    config: net.NetworkConfig,
    testset: ds.EpisodeSet,
    spec: ds.NormalizationSpec,
    workers: int = 1,
) -> EvalReport:
    """Run inference over a test set and grade the derived BP values.

    The model is immutable during inference, so episodes may fan out across
    ``workers`` threads; results merge in episode order either way.
    """
    if len(testset) == 0:
        raise UsageError("cannot evaluate an empty set")
    if spec is None:
        raise UsageError("evaluation requires the training normalization spec")

    def infer(e: ds.Episode) -> np.ndarray:
        x = (e.ppg - spec.ppg_mean) / spec.ppg_std
        return ds.denormalize(net.bpnet_forward(p, config, x), spec, "abp")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            predictions = list(pool.map(infer, testset.episodes))
    else:
        predictions = [infer(e) for e in testset.episodes]

    predicted = [extract_bp(abp) for abp in predictions]
    truth = [extract_bp(e.abp) for e in testset.episodes]
    return report_from_triples(predicted, truth, testset.subject_count())


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render_report(report: EvalReport) -> str:
    """Human-readable table of cumulative percentages, grades and verdicts."""
    t = BhsThresholds()
    lines = [
        f"Episodes: {report.n_episodes}    Subjects: {report.n_subjects}",
        "",
        "            <5mmHg   <10mmHg  <15mmHg   Grade",
    ]
    for q in QUANTITIES:
        r = report.quantities[q]
        c = r.cumulative
        lines.append(
            f"  {q.upper():<4}     {c[0]:6.2f}%   {c[1]:6.2f}%  {c[2]:6.2f}%     {r.bhs}"
        )
    for grade, floors in (("A", t.grade_a), ("B", t.grade_b), ("C", t.grade_c)):
        lines.append(
            f"  floor {grade}  {floors[0]:6.2f}%   {floors[1]:6.2f}%  {floors[2]:6.2f}%"
        )
    lines.append("")
    lines.append("            MAE       ME        SD     AAMI")
    for q in QUANTITIES:
        r = report.quantities[q]
        lines.append(
            f"  {q.upper():<4}   {r.mae:7.3f}  {r.me:7.3f}   {r.sd:7.3f}   {r.aami}"
        )
    lines.append("  limits            <=5.000   <=8.000   (from 85 subjects)")
    return "\n".join(lines) + "\n"


def report_lines(report: EvalReport) -> str:
    """Machine-readable key/value form, one tab-separated pair per line."""
    out = [
        f"n_episodes\t{report.n_episodes}",
        f"n_subjects\t{report.n_subjects}",
    ]
    for q in QUANTITIES:
        r = report.quantities[q]
        out.append(f"{q}.mae\t{r.mae!r}")
        out.append(f"{q}.me\t{r.me!r}")
        out.append(f"{q}.sd\t{r.sd!r}")
        for b, v in zip((5, 10, 15), r.cumulative):
            out.append(f"{q}.pct_lt_{b}\t{v!r}")
        out.append(f"{q}.bhs\t{r.bhs}")
        out.append(f"{q}.aami\t{r.aami}")
    return "\n".join(out) + "\n"
