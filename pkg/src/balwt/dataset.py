"""CSV ingestion, feature expansion and construction of centered problems."""
import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInput, InvalidSplit, ParseError, SchemaError

MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}


@dataclass
class RawDataset:
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    column_names: list
    rows_read: int = 0
    rows_rejected: int = 0

    @property
    def n_control(self):
        return int(np.sum(self.treatment == 0))

    @property
    def n_treated(self):
        return int(np.sum(self.treatment == 1))


@dataclass
class ProblemData:
    """Centered source design, source outcomes and the target feature profile.

    ``phi_q_mean`` is expressed relative to ``center`` (the source means), so
    it is also the feature shift between target and source. ``phi_q_rows``
    holds the target rows on the original (uncentered) scale.
    """

    phi_p: np.ndarray
    y_p: np.ndarray
    phi_q_mean: np.ndarray
    phi_q_rows: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    feature_names: Optional[list] = None
    # subsets of a centered sample (cross-fitting folds) keep the parent frame
    require_centered: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.phi_p = np.atleast_2d(np.asarray(self.phi_p, dtype=float))
        self.y_p = np.asarray(self.y_p, dtype=float).ravel()
        self.phi_q_mean = np.asarray(self.phi_q_mean, dtype=float).ravel()
        n, d = self.phi_p.shape
        if self.y_p.shape != (n,):
            raise InvalidInput(f"y_p has length {self.y_p.size}, expected {n}")
        if self.phi_q_mean.shape != (d,):
            raise InvalidInput(f"phi_q_mean has length {self.phi_q_mean.size}, expected {d}")
        for name, arr in (("phi_p", self.phi_p), ("y_p", self.y_p), ("phi_q_mean", self.phi_q_mean)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInput(f"{name} contains non-finite entries")
        scale = max(1.0, float(np.max(np.abs(self.phi_p), initial=0.0)))
        if self.require_centered and n and np.max(np.abs(self.phi_p.mean(axis=0)), initial=0.0) > 1e-10 * scale:
            raise InvalidInput("phi_p columns are not centered")
        if self.center is None:
            self.center = np.zeros(d)
        else:
            self.center = np.asarray(self.center, dtype=float).ravel()
        if self.phi_q_rows is not None:
            self.phi_q_rows = np.atleast_2d(np.asarray(self.phi_q_rows, dtype=float))
            if self.phi_q_rows.shape[1] != d:
                raise InvalidInput("phi_q_rows has the wrong number of columns")
            implied = self.phi_q_rows.mean(axis=0) - self.center
            tol = 1e-10 * max(1.0, float(np.max(np.abs(self.phi_q_rows), initial=0.0)))
            if np.max(np.abs(implied - self.phi_q_mean), initial=0.0) > tol:
                raise InvalidInput("phi_q_mean disagrees with the mean of phi_q_rows")

    @property
    def n(self):
        return self.phi_p.shape[0]

    @property
    def d(self):
        return self.phi_p.shape[1]

    @property
    def m(self):
        return 0 if self.phi_q_rows is None else self.phi_q_rows.shape[0]

    @property
    def phi_q_rows_centered(self):
        if self.phi_q_rows is None:
            return None
        return self.phi_q_rows - self.center

    @property
    def gram(self):
        return self.phi_p.T @ self.phi_p

    def with_outcome(self, y):
        return ProblemData(self.phi_p, y, self.phi_q_mean, self.phi_q_rows, self.center,
                           self.feature_names, self.require_centered)

    def with_target(self, phi_q_mean):
        return ProblemData(self.phi_p, self.y_p, phi_q_mean, None, self.center,
                           self.feature_names, self.require_centered)

    def subset(self, rows):
        """Rows of the source sample, kept in this problem's centering frame."""
        return ProblemData(self.phi_p[rows], self.y_p[rows], self.phi_q_mean, None, self.center,
                           self.feature_names, require_centered=False)


def problem_from_arrays(source, y, target_rows=None, target_mean=None, feature_names=None) -> ProblemData:
    """Center an uncentered source design and express the target relative to it.

    Give either the raw target rows or the raw target mean.
    """
    source = np.atleast_2d(np.asarray(source, dtype=float))
    center = source.mean(axis=0)
    phi_p = source - center
    # a second pass removes the rounding left by the first
    phi_p -= phi_p.mean(axis=0)
    rows = None
    if target_rows is not None:
        rows = np.atleast_2d(np.asarray(target_rows, dtype=float))
        q_mean = rows.mean(axis=0) - center
    elif target_mean is not None:
        q_mean = np.asarray(target_mean, dtype=float) - center
    else:
        raise InvalidInput("either target_rows or target_mean is required")
    return ProblemData(phi_p, y, q_mean, rows, center, feature_names)


class ExpansionKind(str, Enum):
    identity = "identity"
    squares_of_listed_columns = "squares_of_listed_columns"
    pairwise_interactions_plus_quadratics = "pairwise_interactions_plus_quadratics"


@dataclass
class FeatureExpansion:
    """Feature recipe applied identically to source and target rows.

    ``squares_of_listed_columns`` appends the square of every continuous
    column. ``pairwise_interactions_plus_quadratics`` appends those squares,
    then every pairwise product within the continuous columns and within the
    discrete columns (pairs in lexicographic index order).
    """

    kind: ExpansionKind = ExpansionKind.identity
    continuous_columns: list = field(default_factory=list)
    discrete_columns: list = field(default_factory=list)

    def __post_init__(self):
        self.kind = ExpansionKind(self.kind)

    def _terms(self, k):
        for idx in list(self.continuous_columns) + list(self.discrete_columns):
            if not 0 <= idx < k:
                raise InvalidInput(f"expansion column index {idx} out of range for {k} covariates")
        squares = []
        pairs = []
        if self.kind is not ExpansionKind.identity:
            squares = list(self.continuous_columns)
        if self.kind is ExpansionKind.pairwise_interactions_plus_quadratics:
            pairs = list(combinations(sorted(self.continuous_columns), 2))
            pairs += list(combinations(sorted(self.discrete_columns), 2))
            pairs.sort()
        return squares, pairs

    def dimension(self, k):
        squares, pairs = self._terms(k)
        return k + len(squares) + len(pairs)

    def apply(self, x, names=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = x.shape[1]
        names = list(names) if names is not None else [f"x{j}" for j in range(k)]
        squares, pairs = self._terms(k)
        cols = [x]
        out_names = list(names)
        if squares:
            cols.append(x[:, squares] ** 2)
            out_names += [f"{names[j]}^2" for j in squares]
        if pairs:
            cols.append(np.column_stack([x[:, i] * x[:, j] for i, j in pairs]))
            out_names += [f"{names[i]}*{names[j]}" for i, j in pairs]
        return np.hstack(cols), out_names


def _parse_float(token, row, column):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {token!r} as a number", row) from None
    if math.isinf(value):
        raise ParseError(f"column {column!r}: infinite value", row)
    return value


def ingest_csv(path, treatment: str, outcome: str, covariates: Optional[Sequence[str]] = None) -> RawDataset:
    """Read a CSV with a header row.

    Rows with a missing cell in any used column are dropped and counted in
    ``rows_rejected``. Row numbers in errors count the header as row 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if covariates is None:
            covariates = [h for h in header if h not in (treatment, outcome)]
        covariates = list(covariates)
        for col in [treatment, outcome] + covariates:
            if col not in header:
                raise SchemaError(f"column {col!r} not found in {path}")
        if not covariates:
            raise SchemaError("no covariate columns")
        t_idx = header.index(treatment)
        y_idx = header.index(outcome)
        x_idx = [header.index(c) for c in covariates]

        xs, ts, ys = [], [], []
        rows_read = rejected = 0
        for line_no, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            rows_read += 1
            if len(record) < len(header):
                record = record + [""] * (len(header) - len(record))
            cells = [record[i].strip() for i in [t_idx, y_idx] + x_idx]
            if any(c.lower() in MISSING_TOKENS for c in cells):
                rejected += 1
                continue
            t = _parse_float(cells[0], line_no, treatment)
            if t not in (0.0, 1.0):
                raise ParseError(f"treatment must be 0 or 1, got {cells[0]!r}", line_no)
            ts.append(t)
            ys.append(_parse_float(cells[1], line_no, outcome))
            xs.append([_parse_float(c, line_no, name) for c, name in zip(cells[2:], covariates)])

    return RawDataset(
        covariates=np.array(xs, dtype=float).reshape(len(xs), len(covariates)),
        treatment=np.array(ts, dtype=int),
        outcome=np.array(ys, dtype=float),
        column_names=covariates,
        rows_read=rows_read,
        rows_rejected=rejected,
    )


def build_problem(raw: RawDataset, expansion: FeatureExpansion = None,
                  target: str = "att_control_to_treated", target_rows=None) -> ProblemData:
    """Expand features and center them on the source sample.

    ``att_control_to_treated`` uses control rows as the source and treated
    rows as the target. ``custom_rows`` uses every row as the source and the
    supplied raw covariate rows as the target.
    """
    expansion = expansion or FeatureExpansion()
    if target == "att_control_to_treated":
        src = raw.treatment == 0
        x_src, y_src = raw.covariates[src], raw.outcome[src]
        x_tgt = raw.covariates[~src]
    elif target == "custom_rows":
        if target_rows is None:
            raise InvalidSplit("custom_rows target needs target_rows")
        x_src, y_src = raw.covariates, raw.outcome
        x_tgt = np.atleast_2d(np.asarray(target_rows, dtype=float))
    else:
        raise InvalidSplit(f"unknown target {target!r}")
    if x_src.shape[0] < 2:
        raise InvalidSplit("fewer than 2 source rows")
    if x_tgt.shape[0] < 1:
        raise InvalidSplit("empty target")
    phi_src, names = expansion.apply(x_src, raw.column_names)
    phi_tgt, _ = expansion.apply(x_tgt, raw.column_names)
    return problem_from_arrays(phi_src, y_src, target_rows=phi_tgt, feature_names=names)
