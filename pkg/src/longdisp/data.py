"""In-memory data model, long-format file ingestion, validation, summaries.

The input format is long: one row per observation, with columns for the
subject id, group label, measurement time, outcome, the modifier, and the
covariates.  A `ColumnSchema` maps column names to those roles, so files
keep their native headers.

Datasets are immutable after construction; all numpy views handed out are
marked read-only so they can be shared freely across threads.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError, ValidationError


@dataclass(frozen=True)
class ModifierSpec:
    """Kind of the modifier variable: continuous, or discrete with declared levels.

    An empty ``levels`` tuple on a discrete spec means "infer the levels
    from the data at load time".
    """

    kind: str  # "continuous" | "discrete"
    levels: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ValueError(f"modifier kind must be continuous or discrete, got {self.kind!r}")
        if self.kind == "continuous" and self.levels:
            raise ValueError("continuous modifier must not declare levels")
        if self.levels != tuple(sorted(set(self.levels))):
            raise ValueError("modifier levels must be sorted and distinct")

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"


CONTINUOUS = ModifierSpec("continuous")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Subject:
    """One individual's group-invariant modifier value and repeated measurements.

    times, outcomes and covariates are aligned: row j of ``covariates`` holds
    the covariate vector observed at ``times[j]``.
    """

    id: str
    modifier: float
    times: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray  # shape (n_obs, p)

    def __post_init__(self):
        times = _readonly(np.asarray(self.times, dtype=np.float64))
        outcomes = _readonly(np.asarray(self.outcomes, dtype=np.float64))
        covariates = np.asarray(self.covariates, dtype=np.float64)
        if covariates.ndim != 2:
            covariates = covariates.reshape(len(times), -1)
        covariates = _readonly(covariates)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "covariates", covariates)
        n = len(times)
        if n < 1:
            raise ValidationError(f"subject {self.id!r} has no observations")
        if len(outcomes) != n or covariates.shape[0] != n:
            raise ValidationError(
                f"subject {self.id!r}: times, outcomes and covariate rows must align "
                f"({n}, {len(outcomes)}, {covariates.shape[0]})"
            )
        if not math.isfinite(self.modifier):
            raise ValidationError(f"subject {self.id!r}: modifier is not finite")
        for name, arr in (("times", times), ("outcomes", outcomes), ("covariates", covariates)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"subject {self.id!r}: non-finite value in {name}")

    @property
    def n_obs(self) -> int:
        return len(self.times)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class LongitudinalDataset:
    """Validated collection of subjects for one group."""

    subjects: tuple[Subject, ...]
    group: str
    modifier: ModifierSpec
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        subjects = tuple(self.subjects)
        object.__setattr__(self, "subjects", subjects)
        if len(subjects) < 2:
            raise ValidationError(
                f"group {self.group!r} needs at least 2 subjects, got {len(subjects)}"
            )
        p = subjects[0].p
        for s in subjects:
            if s.p != p:
                raise ValidationError(
                    f"subject {s.id!r} has {s.p} covariates, expected {p}"
                )
        names = tuple(self.covariate_names) or tuple(f"x{r}" for r in range(1, p + 1))
        if len(names) != p:
            raise ValidationError(
                f"{len(names)} covariate names for {p} covariate columns"
            )
        object.__setattr__(self, "covariate_names", names)
        if self.modifier.is_discrete:
            levels = self.modifier.levels
            if not levels:
                levels = tuple(sorted({s.modifier for s in subjects}))
                object.__setattr__(self, "modifier", ModifierSpec("discrete", levels))
            else:
                for s in subjects:
                    if s.modifier not in levels:
                        raise ValidationError(
                            f"subject {s.id!r}: modifier {s.modifier!r} is not a "
                            f"declared level {levels}"
                        )

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def p(self) -> int:
        return self.subjects[0].p

    @cached_property
    def total_obs(self) -> int:
        return int(sum(s.n_obs for s in self.subjects))

    @cached_property
    def time_range(self) -> tuple[float, float]:
        return float(self.obs_times.min()), float(self.obs_times.max())

    # Flattened observation-level views, built once and shared.
    @cached_property
    def obs_times(self) -> np.ndarray:
        return _readonly(np.concatenate([s.times for s in self.subjects]))

    @cached_property
    def obs_outcomes(self) -> np.ndarray:
        return _readonly(np.concatenate([s.outcomes for s in self.subjects]))

    @cached_property
    def obs_covariates(self) -> np.ndarray:
        return _readonly(np.concatenate([s.covariates for s in self.subjects], axis=0))

    @cached_property
    def obs_subject(self) -> np.ndarray:
        """Subject index (position in ``subjects``) of each observation row."""
        idx = np.repeat(
            np.arange(self.n_subjects), [s.n_obs for s in self.subjects]
        )
        return _readonly(idx)

    @cached_property
    def subject_modifiers(self) -> np.ndarray:
        return _readonly(np.array([s.modifier for s in self.subjects], dtype=np.float64))

    def replace_subjects(self, subjects) -> "LongitudinalDataset":
        """New dataset with the same group metadata but different subjects."""
        return LongitudinalDataset(
            subjects=tuple(subjects),
            group=self.group,
            modifier=self.modifier,
            covariate_names=self.covariate_names,
        )


@dataclass(frozen=True)
class ColumnSchema:
    """Maps file column names to roles."""

    id: str
    group: str
    time: str
    outcome: str
    modifier: str
    covariates: tuple[str, ...]
    delimiter: str = ","

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        names = self.required_columns()
        if len(set(names)) != len(names):
            raise SchemaError(f"column roles must be distinct, got {names}")

    def required_columns(self) -> tuple[str, ...]:
        return (self.id, self.group, self.time, self.outcome, self.modifier) + tuple(
            self.covariates
        )


def canonical_schema(covariate_names, delimiter: str = ",") -> ColumnSchema:
    """Schema for files written by :func:`write_dataset`."""
    return ColumnSchema(
        id="id",
        group="group",
        time="time",
        outcome="outcome",
        modifier="modifier",
        covariates=tuple(covariate_names),
        delimiter=delimiter,
    )


def _parse_cell(raw: str, column: str, line_no: int) -> float:
    raw = raw.strip()
    if raw == "":
        raise ParseError(f"line {line_no}: missing value in column {column!r}")
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(
            f"line {line_no}: cannot parse {raw!r} in column {column!r} as a number"
        ) from None
    if not math.isfinite(value):
        raise ParseError(f"line {line_no}: non-finite value {raw!r} in column {column!r}")
    return value


def load_dataset(
    path,
    schema: ColumnSchema,
    group_filter: str,
    modifier: ModifierSpec = CONTINUOUS,
) -> LongitudinalDataset:
    """Read a long-format delimited file and assemble one group's dataset.

    Rows whose group column equals ``group_filter`` are grouped by subject id;
    within each subject, observations are sorted by time (stable).  Subjects
    are ordered by id so the result does not depend on input row order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, expected a header row") from None
        header = [h.strip() for h in header]
        col_index: dict[str, int] = {}
        for col in schema.required_columns():
            if col not in header:
                raise SchemaError(f"{path}: required column {col!r} not found in header")
            col_index[col] = header.index(col)

        per_subject: dict[str, dict] = {}
        seen_rows: set[tuple] = set()
        n_matched = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(
                    f"line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            if row[col_index[schema.group]].strip() != group_filter:
                continue
            n_matched += 1
            sid = row[col_index[schema.id]].strip()
            t = _parse_cell(row[col_index[schema.time]], schema.time, line_no)
            y = _parse_cell(row[col_index[schema.outcome]], schema.outcome, line_no)
            z = _parse_cell(row[col_index[schema.modifier]], schema.modifier, line_no)
            xs = [
                _parse_cell(row[col_index[c]], c, line_no) for c in schema.covariates
            ]
            key = (sid, t, y, z, tuple(xs))
            if key in seen_rows:
                warnings.warn(
                    f"{path}: line {line_no}: exact duplicate row for subject {sid!r}",
                    stacklevel=2,
                )
            seen_rows.add(key)
            rec = per_subject.setdefault(
                sid, {"modifier": z, "times": [], "outcomes": [], "covariates": []}
            )
            if rec["modifier"] != z:
                raise ValidationError(
                    f"line {line_no}: subject {sid!r} has inconsistent modifier values "
                    f"({rec['modifier']!r} vs {z!r})"
                )
            rec["times"].append(t)
            rec["outcomes"].append(y)
            rec["covariates"].append(xs)

    if n_matched == 0:
        raise ValidationError(f"{path}: empty group: no rows with group {group_filter!r}")

    subjects = []
    for sid in sorted(per_subject):
        rec = per_subject[sid]
        times = np.array(rec["times"], dtype=np.float64)
        order = np.argsort(times, kind="stable")
        subjects.append(
            Subject(
                id=sid,
                modifier=rec["modifier"],
                times=times[order],
                outcomes=np.array(rec["outcomes"], dtype=np.float64)[order],
                covariates=np.array(rec["covariates"], dtype=np.float64)[order],
            )
        )
    return LongitudinalDataset(
        subjects=tuple(subjects),
        group=group_filter,
        modifier=modifier,
        covariate_names=tuple(schema.covariates),
    )


def format_float(x: float) -> str:
    """17 significant digits: enough for exact float round trips."""
    return f"{x:.17g}"


def write_datasets(datasets, path, delimiter: str = ",") -> None:
    """Write one or more groups in the canonical long format, single header.

    All groups must share the covariate names; rows appear group by group in
    the given order.
    """
    datasets = list(datasets)
    if not datasets:
        raise ValueError("write_datasets needs at least one dataset")
    names = datasets[0].covariate_names
    for d in datasets[1:]:
        if d.covariate_names != names:
            raise ValueError("all groups must share covariate names")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["id", "group", "time", "outcome", "modifier", *names])
        for dataset in datasets:
            for s in dataset.subjects:
                for j in range(s.n_obs):
                    writer.writerow(
                        [
                            s.id,
                            dataset.group,
                            format_float(s.times[j]),
                            format_float(s.outcomes[j]),
                            format_float(s.modifier),
                            *(format_float(v) for v in s.covariates[j]),
                        ]
                    )


def write_dataset(dataset: LongitudinalDataset, path, delimiter: str = ",") -> None:
    """Write a dataset in the canonical long format readable by load_dataset."""
    write_datasets([dataset], path, delimiter=delimiter)


@dataclass(frozen=True)
class VariableSummary:
    name: str
    kind: str  # "numeric" | "categorical"
    mean: float | None = None
    sd: float | None = None
    levels: tuple[tuple[float, int, float], ...] = ()  # (value, count, percent)


@dataclass(frozen=True)
class GroupSummary:
    group: str
    n_subjects: int
    total_obs: int
    variables: tuple[VariableSummary, ...]

    def rows(self):
        """Tidy rows: (variable, kind, level, count, percent, mean, sd)."""
        out = []
        for v in self.variables:
            if v.kind == "numeric":
                out.append((v.name, "numeric", "", "", "", v.mean, v.sd))
            else:
                for value, count, pct in v.levels:
                    out.append((v.name, "categorical", value, count, pct, "", ""))
        return out

    def to_records(self):
        recs = {
            "group": self.group,
            "n_subjects": self.n_subjects,
            "total_obs": self.total_obs,
            "variables": [],
        }
        for v in self.variables:
            rec: dict = {"name": v.name, "kind": v.kind}
            if v.kind == "numeric":
                rec["mean"] = v.mean
                rec["sd"] = v.sd
            else:
                rec["levels"] = [
                    {"value": value, "count": count, "percent": pct}
                    for value, count, pct in v.levels
                ]
            recs["variables"].append(rec)
        return recs


def _is_categorical(values: np.ndarray) -> bool:
    # only unambiguous indicators; integer-looking scales (ages, scores)
    # must keep their mean and SD
    return bool(np.isin(values, (0.0, 1.0)).all())


def _summarize_variable(name: str, values: np.ndarray, categorical: bool) -> VariableSummary:
    if categorical:
        uniq, counts = np.unique(values, return_counts=True)
        total = counts.sum()
        levels = tuple(
            (float(u), int(c), 100.0 * c / total) for u, c in zip(uniq, counts)
        )
        return VariableSummary(name=name, kind="categorical", levels=levels)
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return VariableSummary(name=name, kind="numeric", mean=mean, sd=sd)


def summarize(dataset: LongitudinalDataset) -> GroupSummary:
    """Subject-level summary: first observation's covariates plus the modifier.

    Numeric variables get a mean and sample SD; 0/1 indicators and discrete
    modifiers are tabulated as percentages.
    """
    first_rows = np.array(
        [s.covariates[0] for s in dataset.subjects], dtype=np.float64
    ).reshape(dataset.n_subjects, dataset.p)
    modifiers = dataset.subject_modifiers
    variables = []
    for r, name in enumerate(dataset.covariate_names):
        col = first_rows[:, r]
        variables.append(_summarize_variable(name, col, _is_categorical(col)))
    variables.append(
        _summarize_variable("modifier", modifiers, dataset.modifier.is_discrete)
    )
    return GroupSummary(
        group=dataset.group,
        n_subjects=dataset.n_subjects,
        total_obs=dataset.total_obs,
        variables=tuple(variables),
    )
