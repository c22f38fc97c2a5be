"""Survey response matrices: loading, validation and dichotomization.

Matrices are stored as float arrays with ``nan`` marking a missing response.
"""

from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConflictError, ContractError, ParseError

LIKERT_LEVELS = (1, 2, 3, 4, 5)
MISSING_TOKENS = {"", "na", "nan", "null", "."}


def _check_ids(ids, axis):
    ids = tuple(str(i) for i in ids)
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise ContractError(f"duplicate {axis} id {dup!r}")
    return ids


@dataclass(frozen=True, eq=False)
class LikertMatrix:
    respondent_ids: tuple
    item_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "respondent_ids", _check_ids(self.respondent_ids, "respondent"))
        object.__setattr__(self, "item_ids", _check_ids(self.item_ids, "item"))
        values = np.array(self.values, dtype=float)
        if values.shape != (len(self.respondent_ids), len(self.item_ids)):
            raise ContractError(
                f"values shape {values.shape} does not match "
                f"{len(self.respondent_ids)} respondents x {len(self.item_ids)} items"
            )
        if values.shape[0] < 2 or values.shape[1] < 2:
            raise ContractError("a Likert matrix needs at least 2 respondents and 2 items")
        present = values[~np.isnan(values)]
        if not np.isin(present, LIKERT_LEVELS).all():
            raise ContractError("Likert values must lie in {1,...,5}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Binary N x P response matrix (``X`` in the LSIRM likelihood)."""

    respondent_ids: tuple
    item_ids: tuple
    values: np.ndarray
    group_label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "respondent_ids", _check_ids(self.respondent_ids, "respondent"))
        object.__setattr__(self, "item_ids", _check_ids(self.item_ids, "item"))
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape != (len(self.respondent_ids), len(self.item_ids)):
            raise ContractError(
                f"values shape {values.shape} does not match "
                f"{len(self.respondent_ids)} respondents x {len(self.item_ids)} items"
            )
        present = values[~np.isnan(values)]
        if not np.isin(present, (0.0, 1.0)).all():
            raise ContractError("response values must be 0 or 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, values, group_label=None, respondent_ids=None, item_ids=None):
        values = np.asarray(values, dtype=float)
        n, p = values.shape
        if respondent_ids is None:
            respondent_ids = [f"r{k + 1}" for k in range(n)]
        if item_ids is None:
            item_ids = [f"i{i + 1}" for i in range(p)]
        return cls(tuple(respondent_ids), tuple(item_ids), values, group_label)

    @property
    def shape(self):
        return self.values.shape

    @property
    def mask(self):
        """Boolean array, True where a response is observed."""
        return ~np.isnan(self.values)


def _parse_likert(token, line, column):
    t = token.strip()
    if t.lower() in MISSING_TOKENS:
        return np.nan
    try:
        v = int(t)
    except ValueError:
        raise ParseError(f"non-integer response {token!r}", line, column) from None
    if v not in LIKERT_LEVELS:
        raise ParseError(f"response {v} outside 1..5", line, column)
    return float(v)


def _read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def load_responses(path, layout: str = "wide") -> LikertMatrix:
    """Read a Likert response file.

    ``wide``: header row ``respondent_id,<item ids...>``, one row per respondent.
    ``long``: header row then ``respondent_id,item_id,response`` triples; a pair
    absent from the file is missing.
    """
    rows = _read_rows(path)
    if not rows:
        raise ParseError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    if layout == "wide":
        item_ids = header[1:]
        resp_ids, values = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            resp_ids.append(row[0].strip())
            values.append([_parse_likert(c, lineno, item_ids[j]) for j, c in enumerate(row[1:])])
        return LikertMatrix(tuple(resp_ids), tuple(item_ids), np.array(values, dtype=float).reshape(len(resp_ids), len(item_ids)))
    if layout == "long":
        if len(header) != 3:
            raise ParseError("long layout needs exactly 3 columns", 1)
        resp_index, item_index, cells = {}, {}, {}
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
            r, i, v = row[0].strip(), row[1].strip(), row[2]
            key = (r, i)
            if key in cells:
                raise ConflictError(f"duplicate pair ({r}, {i})", lineno, header[2])
            resp_index.setdefault(r, len(resp_index))
            item_index.setdefault(i, len(item_index))
            cells[key] = _parse_likert(v, lineno, header[2])
        values = np.full((len(resp_index), len(item_index)), np.nan)
        for (r, i), v in cells.items():
            values[resp_index[r], item_index[i]] = v
        return LikertMatrix(tuple(resp_index), tuple(item_index), values)
    raise ConfigError(f"unknown layout {layout!r} (expected 'wide' or 'long')")


def dichotomize(m, threshold: int = 4, group_label=None) -> ResponseMatrix:
    """Map responses ``>= threshold`` to 1 and the rest to 0; missing stays missing.

    For Likert input ``threshold`` must lie in 2..5. An already binary
    :class:`ResponseMatrix` accepts threshold 1, which is the identity.
    """
    if isinstance(m, ResponseMatrix):
        valid = (1,)
        group_label = group_label if group_label is not None else m.group_label
    else:
        valid = (2, 3, 4, 5)
    if int(threshold) != threshold or int(threshold) not in valid:
        raise ConfigError(f"dichotomize threshold {threshold!r} not in {valid}")
    v = m.values
    out = np.where(np.isnan(v), np.nan, (v >= threshold).astype(float))
    return ResponseMatrix(m.respondent_ids, m.item_ids, out, group_label)


def _fmt_cell(v):
    return "" if np.isnan(v) else str(int(v))


def write_responses(m, path, layout: str = "wide"):
    """Write a Likert or binary matrix in either format :func:`load_responses` reads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if layout == "wide":
            w.writerow(["respondent_id", *m.item_ids])
            for rid, row in zip(m.respondent_ids, m.values):
                w.writerow([rid, *(_fmt_cell(v) for v in row)])
        elif layout == "long":
            w.writerow(["respondent_id", "item_id", "response"])
            for rid, row in zip(m.respondent_ids, m.values):
                for iid, v in zip(m.item_ids, row):
                    if not np.isnan(v):
                        w.writerow([rid, iid, _fmt_cell(v)])
        else:
            raise ConfigError(f"unknown layout {layout!r}")
    return path


def load_binary_responses(path, layout: str = "wide", group_label=None) -> ResponseMatrix:
    """Read a file that already holds 0/1 responses."""
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]

    def parse(tok, line, col):
        t = tok.strip()
        if t.lower() in MISSING_TOKENS:
            return np.nan
        if t not in ("0", "1"):
            raise ParseError(f"binary response expected, got {tok!r}", line, col)
        return float(t)

    if layout != "wide":
        raise ConfigError("binary files are read in wide layout only")
    resp_ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        resp_ids.append(row[0].strip())
        values.append([parse(c, lineno, header[j + 1]) for j, c in enumerate(row[1:])])
    return ResponseMatrix(tuple(resp_ids), tuple(header[1:]), np.array(values, dtype=float), group_label)


@dataclass(frozen=True, eq=False)
class LatentConfig:
    """Labeled points in the plane (item positions or respondent positions)."""

    labels: tuple
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ContractError(f"latent coordinates must be n x 2, got {coords.shape}")
        if len(self.labels) != coords.shape[0]:
            raise ContractError("label count does not match point count")
        coords.setflags(write=False)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_array(cls, coords, labels: Sequence[str] | None = None):
        coords = np.asarray(coords, dtype=float)
        if labels is None:
            labels = [str(i) for i in range(len(coords))]
        return cls(tuple(labels), coords)

    def __len__(self):
        return self.coords.shape[0]


def write_latent(cfg: LatentConfig, path):
    """CSV with columns label, x, y; 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["label", "x", "y"])
        for lab, (x, y) in zip(cfg.labels, cfg.coords):
            wr.writerow([lab, "%.17g" % x, "%.17g" % y])
    return path


def load_latent(path) -> LatentConfig:
    labels, coords = [], []
    for lineno, row in enumerate(_read_rows(path)[1:], start=2):
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
        labels.append(row[0])
        try:
            coords.append([float(row[1]), float(row[2])])
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {row[1:]!r}", lineno) from None
    return LatentConfig(tuple(labels), np.array(coords, dtype=float).reshape(-1, 2))
