"""Dataset container, canonical CSV schema, and source adapters.

Canonical schema (one menu per row, comma-separated CSV, lists joined by
semicolons so rows survive spreadsheet round-trips):

    menu_id, left_outcomes, left_probs, right_outcomes, right_probs,
    n_trials, left_choice_rate

``n_trials`` and ``left_choice_rate`` may be empty for prediction-only
datasets. Adapters map published source layouts into this schema and apply
the dataset-specific filters; their assumed column semantics are documented
on each adapter and violations fail loudly rather than guessing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ParseError,
    ProbabilityNotNormalizedError,
    RulegateError,
    SchemaViolationError,
)
from .features import rescale_factor
from .lotteries import Menu, canonicalize

CANONICAL_COLUMNS = (
    "menu_id",
    "left_outcomes",
    "left_probs",
    "right_outcomes",
    "right_probs",
    "n_trials",
    "left_choice_rate",
)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Loaded menus plus the dataset-wide rescale factor and provenance."""

    menus: tuple[Menu, ...]
    name: str = "dataset"
    rescale: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [m.id for m in self.menus]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise SchemaViolationError(f"duplicate menu ids: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.menus)

    def choice_rates(self) -> np.ndarray:
        """Observed left-choice rates; NaN where absent."""
        return np.array(
            [np.nan if m.choice_rate is None else m.choice_rate for m in self.menus]
        )

    def trial_counts(self) -> np.ndarray:
        return np.array(
            [np.nan if m.n_trials is None else float(m.n_trials) for m in self.menus]
        )

    def has_targets(self) -> bool:
        return all(m.choice_rate is not None for m in self.menus)

    def has_trials(self) -> bool:
        return all(m.n_trials is not None for m in self.menus)


def _join(values: np.ndarray) -> str:
    return ";".join(repr(float(v)) for v in values)


def _split_floats(cell: str) -> list[float]:
    return [float(x) for x in cell.split(";") if x != ""]


def make_dataset(menus: list[Menu], name: str, provenance: dict | None = None) -> Dataset:
    return Dataset(
        menus=tuple(menus),
        name=name,
        rescale=rescale_factor(menus),
        provenance=provenance or {},
    )


def write_canonical(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CANONICAL_COLUMNS)
        for m in dataset.menus:
            writer.writerow(
                [
                    m.id,
                    _join(m.left.outcomes),
                    _join(m.left.probs),
                    _join(m.right.outcomes),
                    _join(m.right.probs),
                    "" if m.n_trials is None else m.n_trials,
                    "" if m.choice_rate is None else repr(m.choice_rate),
                ]
            )


def _require_columns(header: list[str], required: tuple[str, ...], path) -> None:
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaViolationError(
            f"{path}: missing required columns {missing}; found {header}"
        )


def _parse_menu(row: dict, rownum: int, id_col: str = "menu_id") -> Menu:
    try:
        left = canonicalize(
            _split_floats(row["left_outcomes"]), _split_floats(row["left_probs"])
        )
        right = canonicalize(
            _split_floats(row["right_outcomes"]), _split_floats(row["right_probs"])
        )
    except ProbabilityNotNormalizedError:
        raise
    except (RulegateError, ValueError) as exc:
        raise ParseError(str(exc), row=rownum) from exc
    n_trials = row.get("n_trials", "")
    rate = row.get("left_choice_rate", "")
    try:
        return Menu(
            id=str(row[id_col]),
            left=left,
            right=right,
            choice_rate=float(rate) if rate not in ("", None) else None,
            n_trials=int(float(n_trials)) if n_trials not in ("", None) else None,
        )
    except ValueError as exc:
        raise ParseError(str(exc), row=rownum) from exc


def load_canonical(path, name: str | None = None) -> Dataset:
    """Load a canonical-schema CSV."""
    menus = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames or [], CANONICAL_COLUMNS, path)
        for rownum, row in enumerate(reader, start=2):
            menus.append(_parse_menu(row, rownum))
    return make_dataset(menus, name or str(path), {"schema": "canonical", "path": str(path)})


CHOICES13K_COLUMNS = (
    "menu_id",
    "left_outcomes",
    "left_probs",
    "right_outcomes",
    "right_probs",
    "n_trials",
    "left_choice_rate",
    "feedback",
    "amb",
)


def load_choices13k(path, name: str = "choices13k") -> Dataset:
    """Adapter for a choices13k export with explicit lottery lists.

    Assumed column semantics (beyond the canonical seven):

    ========  =====================================================
    feedback  1 when the problem was run with feedback, else 0
    amb       1 when probabilities were masked (ambiguous), else 0
    ========  =====================================================

    Filters applied, matching the baseline protocol the published scores
    use: ambiguous problems dropped, only feedback problems kept (feedback
    problems have more repetitions per menu, so the menu-level frequency is
    a more precise target). Any other layout raises SchemaViolation: remap
    your export to these columns rather than relying on a guess here.
    """
    menus = []
    kept = dropped_amb = dropped_feedback = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames or [], CHOICES13K_COLUMNS, path)
        for rownum, row in enumerate(reader, start=2):
            try:
                amb = int(float(row["amb"]))
                feedback = int(float(row["feedback"]))
            except ValueError as exc:
                raise ParseError(str(exc), row=rownum) from exc
            if amb:
                dropped_amb += 1
                continue
            if not feedback:
                dropped_feedback += 1
                continue
            menus.append(_parse_menu(row, rownum))
            kept += 1
    return make_dataset(
        menus,
        name,
        {
            "schema": "choices13k",
            "path": str(path),
            "kept": kept,
            "dropped_ambiguous": dropped_amb,
            "dropped_no_feedback": dropped_feedback,
        },
    )


CPC18_COLUMNS = (
    "menu_id",
    "left_outcomes",
    "left_probs",
    "right_outcomes",
    "right_probs",
    "choice_left",
    "amb",
)


def load_cpc18(path, name: str = "cpc18") -> Dataset:
    """Adapter for trial-level CPC18-style exports.

    One row per trial. Assumed semantics: ``choice_left`` is 1 when the left
    option was chosen on that trial, ``amb`` flags ambiguous problems (only
    risk problems, amb == 0, are retained). Trials are aggregated to the
    menu level: the left-choice rate and the trial count per menu, which is
    all the trial-level Brier and log-loss metrics need.
    """
    lotteries: dict[str, dict] = {}
    counts: dict[str, int] = {}
    lefts: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames or [], CPC18_COLUMNS, path)
        for rownum, row in enumerate(reader, start=2):
            try:
                if int(float(row["amb"])):
                    continue
                choice = int(float(row["choice_left"]))
            except ValueError as exc:
                raise ParseError(str(exc), row=rownum) from exc
            if choice not in (0, 1):
                raise ParseError(f"choice_left must be 0/1, got {choice}", row=rownum)
            mid = str(row["menu_id"])
            if mid not in lotteries:
                lotteries[mid] = {"row": row, "rownum": rownum}
                counts[mid] = 0
                lefts[mid] = 0
            counts[mid] += 1
            lefts[mid] += choice
    menus = []
    for mid, info in lotteries.items():
        base = _parse_menu(info["row"], info["rownum"])
        menus.append(
            Menu(
                id=mid,
                left=base.left,
                right=base.right,
                choice_rate=lefts[mid] / counts[mid],
                n_trials=counts[mid],
            )
        )
    return make_dataset(
        menus,
        name,
        {
            "schema": "cpc18",
            "path": str(path),
            "n_menus": len(menus),
            "n_trials_total": int(sum(counts.values())),
        },
    )


SCHEMAS = {
    "canonical": load_canonical,
    "choices13k": load_choices13k,
    "cpc18": load_cpc18,
}


def load_csv(path, schema: str = "canonical", name: str | None = None) -> Dataset:
    """Load a dataset by schema name; see SCHEMAS for the adapters."""
    if schema not in SCHEMAS:
        raise SchemaViolationError(
            f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}"
        )
    loader = SCHEMAS[schema]
    return loader(path, name) if name is not None else loader(path)
