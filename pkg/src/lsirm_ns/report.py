"""Tables and the JSON analysis report.

Per group: item positive proportions, the cluster solution, convergence and
predictive-check summaries. Across groups: center distances within each group,
their differences with a highlight mask, and respondent counts per cluster.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .data import ResponseMatrix
from .errors import ContractError, LabelingError

SCHEMA_VERSION = "1.0"


@dataclass(frozen=True, eq=False)
class ProportionTable:
    item_ids: tuple
    values: np.ndarray  # nan where an item has no observed response

    def grand_mean(self):
        return float(np.nanmean(self.values))

    def to_dict(self):
        return {i: (None if math.isnan(v) else float(v)) for i, v in zip(self.item_ids, self.values)}


def positive_proportions(x: ResponseMatrix) -> ProportionTable:
    """Per-item share of positive responses among the observed ones."""
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise ContractError("empty response matrix")
    mask = x.mask
    n_obs = mask.sum(axis=0)
    pos = np.where(mask, x.values, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(n_obs > 0, pos / np.maximum(n_obs, 1), np.nan)
    return ProportionTable(tuple(x.item_ids), values)


def grand_mean_difference(a: ProportionTable, b: ProportionTable) -> float:
    """Mean item proportion of ``a`` minus that of ``b``."""
    return a.grand_mean() - b.grand_mean()


def pairwise_distances(points):
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.hypot(p[:, None, 0] - p[None, :, 0], p[:, None, 1] - p[None, :, 1])


@dataclass(frozen=True, eq=False)
class CenterDistanceTable:
    labels: tuple
    dist_a: np.ndarray
    dist_b: np.ndarray
    difference: np.ndarray  # |dist_a - dist_b|
    highlight: np.ndarray  # boolean, same shape as difference
    threshold: float
    unmatched: dict

    def highlighted_pairs(self):
        i, j = np.nonzero(np.triu(self.highlight, k=1))
        return [(self.labels[a], self.labels[b]) for a, b in zip(i, j)]

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "threshold": self.threshold,
            "distance_a": self.dist_a.tolist(),
            "distance_b": self.dist_b.tolist(),
            "difference": self.difference.tolist(),
            "highlight": self.highlight.tolist(),
            "highlighted_pairs": [list(p) for p in self.highlighted_pairs()],
            "unmatched": self.unmatched,
        }


def distance_difference_table(dist_a, dist_b, labels, highlight_threshold=0.3, unmatched=None) -> CenterDistanceTable:
    """Highlight pairs whose within-group distances differ by more than the threshold."""
    da = np.asarray(dist_a, dtype=float)
    db = np.asarray(dist_b, dtype=float)
    k = len(labels)
    if da.shape != (k, k) or db.shape != (k, k):
        raise ContractError("distance tables must be square and match the labels")
    diff = np.abs(da - db)
    mask = diff > highlight_threshold
    np.fill_diagonal(mask, False)
    return CenterDistanceTable(tuple(labels), da, db, diff, mask, float(highlight_threshold), unmatched or {})


def center_distance_table(centers_a: dict, centers_b: dict, highlight_threshold=0.3) -> CenterDistanceTable:
    """Within-group center distances over the labels both groups share.

    ``centers_a`` and ``centers_b`` map cluster labels to 2-D points.
    """
    shared = sorted(set(centers_a) & set(centers_b))
    if not shared:
        raise LabelingError("the two groups share no cluster labels; match labels first")
    unmatched = {
        "a": sorted(set(centers_a) - set(shared)),
        "b": sorted(set(centers_b) - set(shared)),
    }
    da = pairwise_distances([centers_a[k] for k in shared])
    db = pairwise_distances([centers_b[k] for k in shared])
    return distance_difference_table(da, db, shared, highlight_threshold, unmatched)


@dataclass(frozen=True, eq=False)
class LabelMatch:
    mapping: dict  # label in the other group -> label in the reference group
    distances: dict  # reference label -> distance of the matched pair
    flagged: tuple  # reference labels whose match is farther than the flag distance


def match_labels(ref_centers: dict, other_centers: dict, flag_distance=0.5) -> LabelMatch:
    """Greedy nearest-center correspondence: repeatedly pair the closest unmatched centers.

    Unpaired centers of the other group receive fresh labels after the
    reference labels. Matches farther apart than ``flag_distance`` are flagged
    for review.
    """
    from .clustering import center_labels

    ref_l, oth_l = list(ref_centers), list(other_centers)
    if not ref_l or not oth_l:
        raise LabelingError("both groups need at least one center")
    ref_p = np.array([ref_centers[k] for k in ref_l], dtype=float)
    oth_p = np.array([other_centers[k] for k in oth_l], dtype=float)
    d = np.hypot(ref_p[:, None, 0] - oth_p[None, :, 0], ref_p[:, None, 1] - oth_p[None, :, 1])
    mapping, dists = {}, {}
    free_r, free_o = set(range(len(ref_l))), set(range(len(oth_l)))
    # stable order: by distance, then reference index, then other index
    for flat in np.lexsort((np.tile(np.arange(len(oth_l)), len(ref_l)), np.repeat(np.arange(len(ref_l)), len(oth_l)), d.ravel())):
        i, j = divmod(int(flat), len(oth_l))
        if i in free_r and j in free_o:
            mapping[oth_l[j]] = ref_l[i]
            dists[ref_l[i]] = float(d[i, j])
            free_r.discard(i)
            free_o.discard(j)
    taken = set(ref_l)
    fresh = (lab for lab in center_labels(len(ref_l) + len(oth_l) + 26) if lab not in taken)
    for j in sorted(free_o):
        mapping[oth_l[j]] = next(fresh)
    flagged = tuple(k for k in ref_l if k in dists and dists[k] > flag_distance)
    return LabelMatch(mapping, dists, flagged)


def membership_counts(solution, labels=None) -> dict:
    """Respondents per cluster label plus the midpoint; sums to the respondent count."""
    from .clustering import MIDPOINT_LABEL

    members = solution.student_membership if hasattr(solution, "student_membership") else list(solution)
    labels = list(labels) if labels is not None else list(getattr(solution, "labels", sorted(set(members) - {MIDPOINT_LABEL})))
    counts = {lab: 0 for lab in labels}
    counts[MIDPOINT_LABEL] = 0
    for m in members:
        if m not in counts:
            raise LabelingError(f"membership label {m!r} is not a known cluster")
        counts[m] += 1
    return counts


def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


@dataclass(frozen=True, eq=False)
class AnalysisReport:
    groups: dict  # group name -> per-group section
    cross_group: dict | None
    meta: dict

    def to_dict(self):
        out = {"schema_version": SCHEMA_VERSION, "meta": self.meta, "groups": self.groups}
        if self.cross_group is not None:
            out["cross_group"] = self.cross_group
        return _clean(out)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, d):
        return cls(d["groups"], d.get("cross_group"), d["meta"])

    @classmethod
    def read(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def report_schema() -> dict:
    text = resources.files("lsirm_ns").joinpath("report_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_report(report) -> None:
    """Raise ``jsonschema.ValidationError`` if the report does not match the schema."""
    import jsonschema

    doc = report.to_dict() if isinstance(report, AnalysisReport) else report
    jsonschema.validate(doc, report_schema())


def group_section(name, proportions, solution, rhat_summary, acceptance, ppc, w_bar, z_bar) -> dict:
    return {
        "name": name,
        "positive_proportions": proportions.to_dict(),
        "grand_mean_proportion": proportions.grand_mean(),
        "clusters": solution.to_dict(),
        "membership_counts": membership_counts(solution),
        "convergence": {**rhat_summary.to_dict(), "acceptance_rates": dict(acceptance)},
        "ppc": {"coverage": ppc.coverage, "n_rep": ppc.n_rep, "n_items": len(ppc.item_ids)},
        "item_positions": {k: list(map(float, c)) for k, c in zip(w_bar.labels, w_bar.coords)},
        "respondent_positions": {k: list(map(float, c)) for k, c in zip(z_bar.labels, z_bar.coords)},
    }


def cross_group_section(name_a, name_b, prop_a, prop_b, sol_a, sol_b, threshold=0.3, flag_distance=0.5) -> dict:
    """Label matching, center-distance tables and membership counts for two groups.

    Group ``b``'s clusters are relabelled to their greedy match in group ``a``.
    """
    centers_a = dict(zip(sol_a.labels, sol_a.centers.tolist()))
    centers_b_raw = dict(zip(sol_b.labels, sol_b.centers.tolist()))
    match = match_labels(centers_a, centers_b_raw, flag_distance)
    centers_b = {match.mapping[k]: v for k, v in centers_b_raw.items()}
    table = center_distance_table(centers_a, centers_b, threshold)
    from .clustering import MIDPOINT_LABEL

    relabel = dict(match.mapping)
    relabel[MIDPOINT_LABEL] = MIDPOINT_LABEL
    students_b = [relabel[m] for m in sol_b.student_membership]
    counts_b = membership_counts(students_b, labels=sorted(centers_b))
    return {
        "groups": [name_a, name_b],
        "grand_mean_difference": grand_mean_difference(prop_a, prop_b),
        "label_match": {
            "mapping": match.mapping,
            "distances": match.distances,
            "flagged": list(match.flagged),
            "flag_distance": flag_distance,
        },
        "center_distances": table.to_dict(),
        "membership_counts": {name_a: membership_counts(sol_a), name_b: counts_b},
        "centers": {name_a: centers_a, name_b: centers_b},
    }
