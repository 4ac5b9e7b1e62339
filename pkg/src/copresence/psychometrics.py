"""Questionnaire scoring and cohort comparison.

Four instruments: the MEQ30 mystical-experience questionnaire (factor
scores as percent of maximum), the 16-item ego-dissolution inventory, the
pictorial inclusion-of-community-in-self item, and the 10-item communitas
scale. Cohort results are compared to published reference studies from
their summary statistics with independent-sample t-tests.

The MEQ30 item-to-factor assignment follows the validated instrument
(factor sizes 3/15/6/6); the published source this toolkit reproduces
states only the sizes, so the full mapping is pinned here and frozen by
tests. Factor MEANS/SDs are sample statistics (n-1): the alternative does
not reproduce the published comparison table.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .stats import CohortSummary, cohort_summary, ttest_two_sample_summary

DATA_DIR = Path(__file__).resolve().parent / "data"

FACTORS = ("ineffability", "mystical", "positive_mood", "transcendence")

#: 1-based questionnaire positions per factor (sizes 3 / 15 / 6 / 6).
FACTOR_ITEMS: Mapping[str, tuple[int, ...]] = {
    "ineffability": (3, 10, 29),
    "mystical": (4, 5, 6, 9, 14, 15, 16, 18, 20, 21, 23, 24, 25, 26, 28),
    "positive_mood": (2, 8, 12, 17, 27, 30),
    "transcendence": (1, 7, 11, 13, 19, 22),
}

MEQ30_MAX_ITEM = 5
COMPLETE_MTE_THRESHOLD = 60.0

#: EDI questionnaire positions: even positions are dissolution statements,
#: odd positions inflation statements.
EDI_DISSOLUTION_ITEMS = (2, 4, 6, 8, 10, 12, 14, 16)
EDI_INFLATION_ITEMS = (1, 3, 5, 7, 9, 11, 13, 15)

ICS_CHOICES = "abcdef"  # pictograms, least to most overlapped

COMMUNITAS_MAX_TOTAL = 8 * 7  # first 8 items, each 1..7


class ResponseValidationError(ValueError):
    """An item response is outside its instrument's allowed range."""


def data_path(name: str) -> Path:
    return DATA_DIR / name


# --- MEQ30 -------------------------------------------------------------------


@dataclass(frozen=True)
class Meq30Response:
    items: tuple[int, ...]  # 30 integers, 0..5

    def __post_init__(self) -> None:
        if len(self.items) != 30:
            raise ResponseValidationError(f"MEQ30 needs 30 items, got {len(self.items)}")
        for i, v in enumerate(self.items, start=1):
            if not isinstance(v, int) or isinstance(v, bool) or not (0 <= v <= MEQ30_MAX_ITEM):
                raise ResponseValidationError(f"item {i}: value {v!r} outside 0..{MEQ30_MAX_ITEM}")


@dataclass(frozen=True)
class FactorScores:
    ineffability: float
    mystical: float
    positive_mood: float
    transcendence: float

    def as_dict(self) -> dict[str, float]:
        return {f: getattr(self, f) for f in FACTORS}


def score_meq30(response: Meq30Response) -> FactorScores:
    """Factor scores as percent of maximum: (item mean) / 5 * 100."""
    scores = {}
    for factor, positions in FACTOR_ITEMS.items():
        total = sum(response.items[p - 1] for p in positions)
        scores[factor] = total / (len(positions) * MEQ30_MAX_ITEM) * 100.0
    return FactorScores(**scores)


def complete_mte(scores: FactorScores) -> bool:
    """A 'complete' mystical-type experience: every factor at >= 60%."""
    return all(getattr(scores, f) >= COMPLETE_MTE_THRESHOLD for f in FACTORS)


# --- EDI ----------------------------------------------------------------------


@dataclass(frozen=True)
class EdiResponse:
    items: tuple[float, ...]  # 16 values, 0..100

    def __post_init__(self) -> None:
        if len(self.items) != 16:
            raise ResponseValidationError(f"EDI needs 16 items, got {len(self.items)}")
        for i, v in enumerate(self.items, start=1):
            if not (0.0 <= v <= 100.0) or not math.isfinite(v):
                raise ResponseValidationError(f"item {i}: value {v!r} outside 0..100")


@dataclass(frozen=True)
class EdiScores:
    dissolution_mean: float
    inflation_mean: float


def score_edi(response: EdiResponse) -> EdiScores:
    dis = sum(response.items[p - 1] for p in EDI_DISSOLUTION_ITEMS) / len(EDI_DISSOLUTION_ITEMS)
    inf = sum(response.items[p - 1] for p in EDI_INFLATION_ITEMS) / len(EDI_INFLATION_ITEMS)
    return EdiScores(dis, inf)


# --- ICS ----------------------------------------------------------------------


def score_ics(choice: str) -> int:
    """Pictogram letter a..f to numeric overlap score 0..5."""
    c = choice.strip().lower()
    if len(c) != 1 or c not in ICS_CHOICES:
        raise ResponseValidationError(f"ICS choice must be one of a..f, got {choice!r}")
    return ICS_CHOICES.index(c)


# --- Communitas -----------------------------------------------------------------


@dataclass(frozen=True)
class CommunitasScores:
    total8: int  # sum of items 1..8, range 8..56
    pct_of_max: float
    bond_participant: int  # item 9
    bond_facilitator: int  # item 10


def communitas_scores(items: Sequence[int]) -> CommunitasScores:
    if len(items) != 10:
        raise ResponseValidationError(f"communitas needs 10 items, got {len(items)}")
    for i, v in enumerate(items, start=1):
        if not isinstance(v, int) or isinstance(v, bool) or not (1 <= v <= 7):
            raise ResponseValidationError(f"item {i}: value {v!r} outside 1..7")
    total8 = sum(items[:8])
    return CommunitasScores(total8, total8 / COMMUNITAS_MAX_TOTAL * 100.0, items[8], items[9])


# --- reference comparison -------------------------------------------------------


@dataclass(frozen=True)
class ReferenceStudy:
    """Published per-factor summaries; factors absent from the study are omitted."""

    label: str
    n: int
    factors: Mapping[str, tuple[float, float]]  # factor -> (mean, sd)
    printed_p: Mapping[str, float] = None  # factor -> p as printed, when transcribed

    def __post_init__(self) -> None:
        if not self.factors:
            raise ValueError(f"study {self.label!r} has no factor summaries")
        object.__setattr__(self, "printed_p", dict(self.printed_p or {}))


@dataclass(frozen=True)
class FactorComparison:
    factor: str
    t: float
    p: float
    distinguishable: bool
    direction: Optional[str]  # "higher" / "lower" (reference vs cohort) when distinguishable


@dataclass(frozen=True)
class StudyClassification:
    label: str
    comparisons: tuple[FactorComparison, ...]

    @property
    def n_compared(self) -> int:
        return len(self.comparisons)

    @property
    def n_indistinguishable(self) -> int:
        return sum(1 for c in self.comparisons if not c.distinguishable)

    @property
    def n_higher(self) -> int:
        return sum(1 for c in self.comparisons if c.direction == "higher")

    @property
    def n_lower(self) -> int:
        return sum(1 for c in self.comparisons if c.direction == "lower")

    @property
    def more_intense_on_all(self) -> bool:
        return self.n_compared > 0 and self.n_higher == self.n_compared


def compare_to_reference(
    cohort: Mapping[str, CohortSummary],
    references: Iterable[ReferenceStudy],
    alpha: float = 0.05,
) -> list[StudyClassification]:
    """t-test each study's available factors against the cohort summaries."""
    out = []
    for study in references:
        comparisons = []
        for factor in FACTORS:
            if factor not in study.factors or factor not in cohort:
                continue
            ref_mean, ref_sd = study.factors[factor]
            res = ttest_two_sample_summary(cohort[factor], CohortSummary(study.n, ref_mean, ref_sd))
            distinguishable = res.p_two_sided <= alpha
            direction = None
            if distinguishable:
                direction = "higher" if ref_mean > cohort[factor].mean else "lower"
            comparisons.append(FactorComparison(factor, res.t, res.p_two_sided, distinguishable, direction))
        out.append(StudyClassification(study.label, tuple(comparisons)))
    return out


# --- CSV ingestion ----------------------------------------------------------------


def _read_rows(text: str, expected_fields: Sequence[str]) -> list[dict[str, str]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ValueError("CSV is empty (header row required)")
    missing = [f for f in expected_fields if f not in reader.fieldnames]
    if missing:
        raise ValueError(f"CSV missing required columns: {missing}")
    return list(reader)


def load_meq30_csv(text: str) -> dict[str, Meq30Response]:
    cols = ["participant_id"] + [f"item{i}" for i in range(1, 31)]
    out = {}
    for row in _read_rows(text, cols):
        pid = row["participant_id"]
        try:
            items = tuple(int(row[f"item{i}"]) for i in range(1, 31))
        except ValueError as e:
            raise ResponseValidationError(f"participant {pid}: {e}") from e
        out[pid] = Meq30Response(items)
    return out


def load_edi_csv(text: str) -> dict[str, EdiResponse]:
    cols = ["participant_id"] + [f"item{i}" for i in range(1, 17)]
    out = {}
    for row in _read_rows(text, cols):
        out[row["participant_id"]] = EdiResponse(tuple(float(row[f"item{i}"]) for i in range(1, 17)))
    return out


def load_ics_csv(text: str) -> dict[str, tuple[int, int]]:
    out = {}
    for row in _read_rows(text, ["participant_id", "pre_choice", "post_choice"]):
        out[row["participant_id"]] = (score_ics(row["pre_choice"]), score_ics(row["post_choice"]))
    return out


def load_communitas_csv(text: str) -> dict[str, CommunitasScores]:
    cols = ["participant_id"] + [f"item{i}" for i in range(1, 11)]
    out = {}
    for row in _read_rows(text, cols):
        out[row["participant_id"]] = communitas_scores([int(row[f"item{i}"]) for i in range(1, 11)])
    return out


def load_factor_scores_csv(text: str) -> dict[str, FactorScores]:
    """Per-participant factor scores (the bundled per-participant table format)."""
    cols = ["participant_id"] + list(FACTORS)
    out = {}
    for row in _read_rows(text, cols):
        out[row["participant_id"]] = FactorScores(**{f: float(row[f]) for f in FACTORS})
    return out


def load_reference_csv(text: str) -> tuple[Optional[ReferenceStudy], list[ReferenceStudy]]:
    """Reference-summary table; blank cells mean the study lacks that factor.

    By convention the first data row is the cohort being compared and every
    following row is a reference study (the bundled table is laid out this
    way, with the cohort row carrying no p-value cells).
    """
    cohort_row: Optional[ReferenceStudy] = None
    studies: list[ReferenceStudy] = []
    for row in _read_rows(text, ["label", "n"]):
        factors = {}
        printed = {}
        for f in FACTORS:
            mean_cell = (row.get(f"{f}_mean") or "").strip()
            sd_cell = (row.get(f"{f}_sd") or "").strip()
            p_cell = (row.get(f"{f}_p") or "").strip()
            if mean_cell == "" or sd_cell == "":
                continue
            factors[f] = (float(mean_cell), float(sd_cell))
            if p_cell:
                printed[f] = float(p_cell)
        study = ReferenceStudy(row["label"], int(row["n"]), factors, printed)
        if cohort_row is None:
            cohort_row = study
        else:
            studies.append(study)
    return cohort_row, studies


def cohort_from_reference_row(row: ReferenceStudy) -> dict[str, CohortSummary]:
    return {f: CohortSummary(row.n, m, sd) for f, (m, sd) in row.factors.items()}


def factor_cohort_summaries(scores: Iterable[FactorScores]) -> dict[str, CohortSummary]:
    """Per-factor cohort summaries over participants' factor scores."""
    rows = list(scores)
    return {f: cohort_summary([getattr(s, f) for s in rows]) for f in FACTORS}
