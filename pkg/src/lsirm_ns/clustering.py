"""From an NS ensemble to cluster centers and memberships.

The ensemble's center counts give the number of clusters (histogram mode),
BIC picks one center set among runs with that count, and a kernel density of
all pooled centers is used to drop selected centers that sit in low-density
regions. Items and respondents are then assigned to the nearest center.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .data import LatentConfig
from .errors import AdjustmentError, ContractError, SelectionError
from .ns import Domain2D, NsEnsemble, NsState, ns_log_likelihood

MIDPOINT_LABEL = "M"

_PENALTIES = {"2M+2": lambda m: 2 * m + 2, "2M": lambda m: 2 * m, "3M": lambda m: 3 * m}


def center_labels(n):
    """A, B, C, ... skipping the midpoint label; AA, AB, ... past the alphabet."""
    letters = [c for c in string.ascii_uppercase if c != MIDPOINT_LABEL]
    out = []
    k = 0
    while len(out) < n:
        q, r = divmod(k, len(letters))
        out.append(letters[r] if q == 0 else letters[q - 1] + letters[r])
        k += 1
    return out


def cluster_count_mode(e: NsEnsemble):
    """Histogram ``{M: runs}`` of per-run center counts and its mode (ties to the smaller M)."""
    counts = e.counts if isinstance(e, NsEnsemble) else np.asarray(e, dtype=int)
    if len(counts) == 0:
        raise ContractError("empty ensemble")
    values, freq = np.unique(counts, return_counts=True)
    hist = {int(v): int(f) for v, f in zip(values, freq)}
    # np.unique sorts, so argmax picks the smallest count among ties
    return hist, int(values[np.argmax(freq)])


def bic(log_lik, n_centers, n_points, penalty="2M+2"):
    if penalty not in _PENALTIES:
        raise ContractError(f"unknown BIC penalty {penalty!r}")
    return -2.0 * log_lik + _PENALTIES[penalty](n_centers) * math.log(n_points)


@dataclass(frozen=True, eq=False)
class BicSelection:
    state: NsState
    run_index: int
    bic: float
    log_likelihood: float
    candidates: int


def select_centers_bic(e: NsEnsemble, w, dom: Domain2D, m: int, penalty="2M+2") -> BicSelection:
    """Minimum-BIC run among those with exactly ``m`` centers (earliest run on ties)."""
    pts = w.coords if isinstance(w, LatentConfig) else np.asarray(w, dtype=float)
    best = None
    n_cand = 0
    for r, f in enumerate(e.fits):
        if f.n_centers != m:
            continue
        n_cand += 1
        ll = ns_log_likelihood(pts, f.state, dom)
        b = bic(ll, m, len(pts), penalty)
        if best is None or b < best[0]:
            best = (b, r, ll)
    if best is None:
        hist, _ = cluster_count_mode(e)
        raise SelectionError(f"no run returned {m} centers (counts {hist}); widen the ensemble (more runs)")
    b, r, ll = best
    return BicSelection(e.fits[r].state, r, float(b), float(ll), n_cand)


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """KDE values on a regular grid; ``density[iy, ix]`` sits at ``(xs[ix], ys[iy])``."""

    xs: np.ndarray
    ys: np.ndarray
    density: np.ndarray
    bandwidth: tuple

    def transformed(self, frame):
        """The grid in original coordinates when it was computed in ``frame``'s unit coordinates."""
        ox, oy = frame.origin
        s = frame.scale
        return DensityGrid(self.xs * s + ox, self.ys * s + oy, self.density / s**2, tuple(b * s for b in self.bandwidth))

    @property
    def max_density(self):
        return float(self.density.max())

    def interpolate(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        f = RegularGridInterpolator((self.ys, self.xs), self.density, bounds_error=False, fill_value=0.0)
        return f(pts[:, ::-1])

    def integral(self):
        dx = self.xs[1] - self.xs[0]
        dy = self.ys[1] - self.ys[0]
        return float(np.trapezoid(np.trapezoid(self.density, dx=dx, axis=1), dx=dy))

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        gx, gy = np.meshgrid(self.xs, self.ys)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["x", "y", "density"])
            for x, y, d in zip(gx.ravel(), gy.ravel(), self.density.ravel()):
                wr.writerow(["%.17g" % x, "%.17g" % y, "%.17g" % d])
        return path

    @classmethod
    def from_csv(cls, path, bandwidth=(float("nan"), float("nan"))):
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        xs = np.unique(arr[:, 0])
        ys = np.unique(arr[:, 1])
        return cls(xs, ys, arr[:, 2].reshape(len(ys), len(xs)), tuple(bandwidth))


def silverman_bandwidth(values, fallback):
    """Per-axis Silverman rule in two dimensions, ``sd * n**(-1/6)``."""
    n = len(values)
    sd = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return sd * n ** (-1.0 / 6.0) if sd > 0 else fallback


def center_density(e, dom: Domain2D | None = None, grid_size: int = 200, bandwidth="silverman") -> DensityGrid:
    """Product-Gaussian KDE of all centers pooled across runs, on a grid over ``dom``."""
    if isinstance(e, NsEnsemble):
        pooled = e.pooled_centers()
        dom = dom or e.domain
    else:
        pooled = np.asarray(e, dtype=float).reshape(-1, 2)
    if len(pooled) == 0:
        raise ContractError("no centers to smooth")
    if dom is None:
        raise ContractError("a domain is required")
    xs = np.linspace(dom.x0, dom.x1, grid_size)
    ys = np.linspace(dom.y0, dom.y1, grid_size)
    if bandwidth == "silverman":
        # zero spread on an axis (every run agrees): fall back to one grid cell
        hx = silverman_bandwidth(pooled[:, 0], xs[1] - xs[0])
        hy = silverman_bandwidth(pooled[:, 1], ys[1] - ys[0])
    else:
        hx = hy = float(bandwidth)
    kx = np.exp(-0.5 * ((xs[None, :] - pooled[:, :1]) / hx) ** 2) / (hx * math.sqrt(2 * math.pi))
    ky = np.exp(-0.5 * ((ys[None, :] - pooled[:, 1:]) / hy) ** 2) / (hy * math.sqrt(2 * math.pi))
    dens = ky.T @ kx / len(pooled)
    return DensityGrid(xs, ys, dens, (hx, hy))


@dataclass(frozen=True, eq=False)
class AdjustedCenters:
    centers: np.ndarray
    kept: tuple  # indices into the selected state's centers
    density_ratio: tuple  # per selected center, density / grid max
    tau: float

    @property
    def dropped(self):
        return tuple(i for i in range(len(self.density_ratio)) if i not in self.kept)


def adjust_centers(selected, density: DensityGrid, tau: float = 0.10) -> AdjustedCenters:
    """Drop centers whose interpolated density is below ``tau`` times the grid maximum."""
    if not (0 <= tau < 1):
        raise ContractError("tau must satisfy 0 <= tau < 1")
    centers = selected.centers if isinstance(selected, NsState) else np.asarray(selected, dtype=float).reshape(-1, 2)
    peak = density.max_density
    ratio = density.interpolate(centers) / peak if peak > 0 else np.zeros(len(centers))
    keep = tuple(int(i) for i in np.flatnonzero(ratio >= tau))
    if not keep:
        raise AdjustmentError(
            f"every selected center falls below {tau} of peak density (ratios {np.round(ratio, 4).tolist()})"
        )
    return AdjustedCenters(centers[list(keep)].copy(), keep, tuple(float(r) for r in ratio), float(tau))


def _dist(points, centers):
    return np.hypot(points[:, None, 0] - centers[None, :, 0], points[:, None, 1] - centers[None, :, 1])


def assign_items(w, centers):
    """Index of the nearest center per item; ties go to the lowest index."""
    pts = w.coords if isinstance(w, LatentConfig) else np.asarray(w, dtype=float).reshape(-1, 2)
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(c) < 1:
        raise ContractError("need at least one center")
    return np.argmin(_dist(pts, c), axis=1)


def assign_students(z, centers, labels=None):
    """Nearest of the centers and their midpoint; returns (labels per respondent, midpoint).

    Centers come before the midpoint, so a tie between them goes to the center.
    """
    pts = z.coords if isinstance(z, LatentConfig) else np.asarray(z, dtype=float).reshape(-1, 2)
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(c) < 1:
        raise ContractError("need at least one center")
    labels = list(labels) if labels is not None else center_labels(len(c))
    mid = c.mean(axis=0)
    pick = np.argmin(_dist(pts, np.vstack([c, mid])), axis=1)
    names = labels + [MIDPOINT_LABEL]
    return [names[k] for k in pick], mid


@dataclass(frozen=True, eq=False)
class ClusterSolution:
    centers: np.ndarray
    labels: tuple
    item_ids: tuple
    item_membership: tuple  # label per item
    respondent_ids: tuple
    student_membership: tuple  # label per respondent, MIDPOINT_LABEL for the midpoint
    midpoint: np.ndarray
    histogram: dict
    mode: int
    bic: float
    selected_run: int
    selected_centers: np.ndarray
    density_ratio: tuple
    dropped: tuple
    tau: float
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "centers": {lab: [float(v) for v in c] for lab, c in zip(self.labels, self.centers)},
            "labels": list(self.labels),
            "item_membership": dict(zip(self.item_ids, self.item_membership)),
            "student_membership": dict(zip(self.respondent_ids, self.student_membership)),
            "midpoint": [float(v) for v in self.midpoint],
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "mode": self.mode,
            "bic": self.bic,
            "selected_run": self.selected_run,
            "selected_centers": self.selected_centers.tolist(),
            "density_ratio": list(self.density_ratio),
            "dropped": list(self.dropped),
            "tau": self.tau,
            **self.extras,
        }

    def transformed(self, frame):
        """Centers and midpoint mapped out of ``frame``'s unit coordinates; memberships unchanged."""
        return dataclasses.replace(
            self,
            centers=frame.from_unit(self.centers),
            midpoint=frame.from_unit(self.midpoint),
            selected_centers=frame.from_unit(self.selected_centers),
            extras={**self.extras, "ns_frame": frame.to_dict()},
        )

    @classmethod
    def from_dict(cls, d):
        labels = tuple(d["labels"])
        items = d["item_membership"]
        students = d["student_membership"]
        return cls(
            centers=np.array([d["centers"][k] for k in labels], dtype=float).reshape(-1, 2),
            labels=labels,
            item_ids=tuple(items),
            item_membership=tuple(items.values()),
            respondent_ids=tuple(students),
            student_membership=tuple(students.values()),
            midpoint=np.array(d["midpoint"], dtype=float),
            histogram={int(k): int(v) for k, v in d["histogram"].items()},
            mode=int(d["mode"]),
            bic=float(d["bic"]),
            selected_run=int(d["selected_run"]),
            selected_centers=np.array(d["selected_centers"], dtype=float).reshape(-1, 2),
            density_ratio=tuple(d["density_ratio"]),
            dropped=tuple(d["dropped"]),
            tau=float(d["tau"]),
            extras={k: d[k] for k in ("ns_frame",) if k in d},
        )

    @classmethod
    def read_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def write_json(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def cluster_positions(
    w_bar: LatentConfig,
    z_bar: LatentConfig,
    ensemble: NsEnsemble,
    ns_cfg,
    density: DensityGrid | None = None,
) -> ClusterSolution:
    """Mode, BIC selection, density adjustment and assignment for one group."""
    hist, mode = cluster_count_mode(ensemble)
    sel = select_centers_bic(ensemble, w_bar, ensemble.domain, mode, ns_cfg.bic_penalty)
    if density is None:
        density = center_density(ensemble, ensemble.domain, ns_cfg.grid_size, ns_cfg.kde_bandwidth)
    adj = adjust_centers(sel.state, density, ns_cfg.tau)
    labels = center_labels(len(adj.centers))
    items = assign_items(w_bar, adj.centers)
    students, mid = assign_students(z_bar, adj.centers, labels)
    return ClusterSolution(
        centers=adj.centers,
        labels=tuple(labels),
        item_ids=tuple(w_bar.labels),
        item_membership=tuple(labels[k] for k in items),
        respondent_ids=tuple(z_bar.labels),
        student_membership=tuple(students),
        midpoint=mid,
        histogram=hist,
        mode=mode,
        bic=sel.bic,
        selected_run=sel.run_index,
        selected_centers=np.array(sel.state.centers),
        density_ratio=adj.density_ratio,
        dropped=adj.dropped,
        tau=adj.tau,
    )
