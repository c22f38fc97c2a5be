"""Neyman-Scott (Thomas) cluster process fitted to item positions.

Parents ``C`` follow a Poisson process with intensity ``kappa = P / (|S| alpha)``;
given ``C`` the items form a Poisson process with intensity
``sum_i alpha * k(u - c_i; omega)``, ``k`` an isotropic bivariate Gaussian
density with per-axis variance ``omega**2``. The likelihood is the density
with respect to the unit-rate Poisson process on ``S``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, ndtr

from .data import LatentConfig
from .errors import ContractError, DegeneracyError, InitializationError
from .seeding import STREAM_NS, derive_seed

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Domain2D:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ContractError(f"degenerate domain {self}")

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def scale(self):
        """Square root of the area; the length unit for relative step sizes."""
        return math.sqrt(self.area)

    def contains(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return (pts[:, 0] >= self.x0) & (pts[:, 0] <= self.x1) & (pts[:, 1] >= self.y0) & (pts[:, 1] <= self.y1)

    def union(self, other: Domain2D) -> Domain2D:
        return Domain2D(min(self.x0, other.x0), max(self.x1, other.x1), min(self.y0, other.y0), max(self.y1, other.y1))

    def to_list(self):
        return [self.x0, self.x1, self.y0, self.y1]


@dataclass(frozen=True)
class UnitFrame:
    """Translation plus isotropic scaling that maps a domain onto one of unit area.

    Isotropic scaling keeps the Gaussian kernel isotropic and nearest-center
    assignments unchanged, while making the alpha recipe's |S| equal to 1.
    """

    origin: tuple
    scale: float

    @classmethod
    def for_domain(cls, dom: Domain2D, standardize=True):
        if not standardize:
            return cls((0.0, 0.0), 1.0)
        return cls((dom.x0, dom.y0), dom.scale)

    def to_unit(self, points):
        return (np.asarray(points, dtype=float) - np.asarray(self.origin)) / self.scale

    def from_unit(self, points):
        return np.asarray(points, dtype=float) * self.scale + np.asarray(self.origin)

    def unit_domain(self, dom: Domain2D) -> Domain2D:
        (ox, oy), s = self.origin, self.scale
        return Domain2D((dom.x0 - ox) / s, (dom.x1 - ox) / s, (dom.y0 - oy) / s, (dom.y1 - oy) / s)

    def latent_to_unit(self, cfg: LatentConfig) -> LatentConfig:
        return LatentConfig(cfg.labels, self.to_unit(cfg.coords))

    def to_dict(self):
        return {"origin": list(self.origin), "scale": self.scale}


def _points(w):
    return w.coords if isinstance(w, LatentConfig) else np.asarray(w, dtype=float).reshape(-1, 2)


def make_domain(w, margin: float = 0.10) -> Domain2D:
    """Bounding box of ``w`` widened by ``margin`` times each side length on both ends."""
    pts = _points(w)
    if margin < 0:
        raise ContractError("margin must be >= 0")
    if len(pts) < 2 or np.all(pts == pts[0]):
        raise DegeneracyError("need at least two distinct points to build a domain")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    side = hi - lo
    # points on an axis-parallel line still need extent across it
    flat = side == 0
    side = np.where(flat, side.max(), side)
    lo = np.where(flat, lo - 0.5 * side, lo)
    hi = np.where(flat, hi + 0.5 * side, hi)
    pad = margin * side
    return Domain2D(lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1])


@dataclass(frozen=True, eq=False)
class NsState:
    centers: np.ndarray
    alpha: float
    omega: float

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).reshape(-1, 2)
        if len(c) < 1:
            raise ContractError("an NS state needs at least one center")
        if self.alpha <= 0 or self.omega <= 0:
            raise ContractError("alpha and omega must be > 0")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    @property
    def n_centers(self):
        return self.centers.shape[0]

    def kappa(self, n_points, domain: Domain2D):
        return n_points / (domain.area * self.alpha)


def kernel_mass(c, omega, dom: Domain2D):
    """Mass of the Gaussian kernel centred at ``c`` that falls inside ``dom``.

    Vectorized over an (M, 2) array of centers.
    """
    c = np.asarray(c, dtype=float)
    cx, cy = c[..., 0], c[..., 1]
    mx = ndtr((dom.x1 - cx) / omega) - ndtr((dom.x0 - cx) / omega)
    my = ndtr((dom.y1 - cy) / omega) - ndtr((dom.y0 - cy) / omega)
    out = mx * my
    return float(out) if out.ndim == 0 else out


def log_kernel(points, centers, omega):
    """(M, P) log Gaussian kernel densities ``log k(w_j - c_i; omega)``."""
    d2 = ((centers[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
    return -0.5 * d2 / omega**2 - _LOG_2PI - 2.0 * math.log(omega)


def ns_log_likelihood(w, s: NsState, dom: Domain2D) -> float:
    pts = _points(w)
    if not dom.contains(pts).all():
        raise ContractError("all points must lie inside the domain")
    total = dom.area - s.alpha * float(np.sum(kernel_mass(s.centers, s.omega, dom)))
    if len(pts):
        lk = log_kernel(pts, s.centers, s.omega)
        total += float(np.sum(math.log(s.alpha) + logsumexp(lk, axis=0)))
    return total


def ns_log_prior(s: NsState, n_points: int, dom: Domain2D) -> float:
    """Parent Poisson-process log density ``M log kappa - kappa |S|``.

    Uniform priors on alpha and omega contribute a constant inside their bounds.
    """
    kappa = s.kappa(n_points, dom)
    return s.n_centers * math.log(kappa) - kappa * dom.area


def ns_log_posterior(w, s: NsState, dom: Domain2D) -> float:
    pts = _points(w)
    return ns_log_likelihood(pts, s, dom) + ns_log_prior(s, len(pts), dom)


def alpha_prior_bounds(n_points, dom_or_area, m_min=2, m_max=10):
    """Uniform-prior bounds on alpha so that the mean parent count spans [m_min, m_max]."""
    if not (1 <= m_min < m_max):
        raise ContractError("need 1 <= m_min < m_max")
    area = dom_or_area.area if isinstance(dom_or_area, Domain2D) else float(dom_or_area)
    return n_points / (m_max * area), n_points / (m_min * area)


def omega_prior_bounds(dom: Domain2D, cfg):
    if cfg.omega_bounds is not None:
        return tuple(float(b) for b in cfg.omega_bounds)
    lo, hi = cfg.omega_bounds_frac
    return lo * dom.scale, hi * dom.scale


@dataclass(frozen=True, eq=False)
class NsFit:
    """Outcome of one birth-death run: the summary state and the center-count trace."""

    state: NsState
    log_posterior: float
    log_likelihood: float
    seed: int
    m_trace: np.ndarray = field(repr=False)
    acceptance: dict = field(default_factory=dict)

    @property
    def n_centers(self):
        return self.state.n_centers


@dataclass(frozen=True, eq=False)
class NsEnsemble:
    fits: tuple
    domain: Domain2D
    master_seed: int | None = None

    def __len__(self):
        return len(self.fits)

    @property
    def counts(self):
        return np.array([f.n_centers for f in self.fits], dtype=int)

    @property
    def seeds(self):
        return [f.seed for f in self.fits]

    def pooled_centers(self):
        return np.vstack([f.state.centers for f in self.fits])


def _kernel():
    from ._ns_kernel import run

    return run


def _initial_state(pts, dom, a_bounds, o_bounds, rng):
    alpha = rng.uniform(*a_bounds)
    omega = rng.uniform(*o_bounds)
    m0 = int(np.clip(round(len(pts) / alpha), 1, None))
    lo = np.array([dom.x0, dom.y0])
    span = np.array([dom.x1 - dom.x0, dom.y1 - dom.y0])
    centers = lo + span * rng.random((m0, 2))
    return centers, alpha, omega


def fit_ns(w, dom: Domain2D, cfg, seed: int, alpha_bounds=None, omega_bounds=None) -> NsFit:
    """One birth-death-move MCMC run summarized by a single visited state.

    ``cfg`` is an :class:`~lsirm_ns.config.NsConfig`. Each iteration proposes a
    birth, death or move of one center (probabilities ``p_birth``, ``p_death``,
    ``p_move``; a death proposed at M=1 is a null move), then random-walk
    updates of alpha and omega that are rejected outside their uniform-prior
    bounds.

    With ``cfg.run_summary == "modal"`` (default) the returned state is the
    highest-posterior state among post-burn-in visits at the most visited
    center count. ``"map"`` returns the highest-posterior state over all
    counts; that comparison mixes densities of different dimension and tends to
    favour extra, nearly coincident centers on tight clusters.
    """
    pts = _points(w)
    if cfg.n_iter < 1000:
        raise ContractError("ns.n_iter must be >= 1000")
    if not dom.contains(pts).all():
        raise ContractError("all points must lie inside the domain")
    if alpha_bounds is None:
        if cfg.alpha_bounds is not None:
            alpha_bounds = tuple(cfg.alpha_bounds)
        else:
            alpha_bounds = alpha_prior_bounds(len(pts), dom, cfg.m_min, cfg.m_max)
    if omega_bounds is None:
        omega_bounds = omega_prior_bounds(dom, cfg)
    rng = np.random.default_rng(seed)
    centers0, alpha0, omega0 = _initial_state(pts, dom, alpha_bounds, omega_bounds, rng)
    ru = rng.random((cfg.n_iter, 7))
    rn = rng.standard_normal((cfg.n_iter, 4))
    steps = np.array(
        [
            cfg.move_step_frac * dom.scale,
            cfg.alpha_step_frac * (alpha_bounds[1] - alpha_bounds[0]),
            cfg.omega_step_frac * (omega_bounds[1] - omega_bounds[0]),
        ]
    )
    run = _kernel()
    best_lp, best_st, best_c, m_trace, acc, init_lp = run(
        np.ascontiguousarray(pts, dtype=float),
        np.array(dom.to_list()),
        centers0,
        float(alpha0),
        float(omega0),
        np.array([*alpha_bounds, *omega_bounds], dtype=float),
        steps,
        np.array([cfg.p_birth, cfg.p_death, cfg.p_move]),
        int(cfg.n_iter),
        int(cfg.burn_in),
        ru,
        rn,
    )
    if not np.isfinite(init_lp):
        raise InitializationError(f"NS log posterior at initialization is not finite ({init_lp})")
    if cfg.run_summary == "map":
        m = int(np.argmax(best_lp))
    else:
        # most visited post-burn-in count; ties go to the smaller count
        m = int(np.argmax(np.bincount(m_trace[cfg.burn_in :])))
    ll, alpha, omega = best_st[m]
    state = NsState(best_c[m, :m].copy(), float(alpha), float(omega))
    acceptance = {
        "birth": acc[0] / max(acc[3], 1),
        "death": acc[1] / max(acc[4], 1),
        "move": acc[2] / max(acc[5], 1),
    }
    return NsFit(state, float(best_lp[m]), float(ll), int(seed), m_trace, acceptance)


def _fit_job(args):
    pts, dom, cfg, seed = args
    return fit_ns(pts, dom, cfg, seed)


def run_ensemble(w, dom: Domain2D, cfg, master_seed: int, n_workers: int | None = None) -> NsEnsemble:
    """``cfg.n_runs`` independent fits; run ``r`` uses ``derive_seed(master_seed, STREAM_NS, r)``."""
    pts = _points(w)
    if cfg.n_runs < 2:
        raise ContractError("an ensemble needs n_runs >= 2")
    n_workers = cfg.n_workers if n_workers is None else n_workers
    jobs = [(pts, dom, cfg, derive_seed(master_seed, STREAM_NS, r)) for r in range(cfg.n_runs)]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            fits = list(pool.map(_fit_job, jobs, chunksize=max(1, len(jobs) // (4 * n_workers))))
    else:
        fits = [_fit_job(j) for j in jobs]
    return NsEnsemble(tuple(fits), dom, master_seed)


_FMT = "%.17g"


def save_ensemble(e: NsEnsemble, path):
    """One CSV row per run: seed, M, alpha, omega, log posterior, log likelihood, centers as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["run", "seed", "n_centers", "alpha", "omega", "log_posterior", "log_likelihood", "centers"])
        for r, f in enumerate(e.fits):
            wr.writerow(
                [
                    r,
                    f.seed,
                    f.n_centers,
                    _FMT % f.state.alpha,
                    _FMT % f.state.omega,
                    _FMT % f.log_posterior,
                    _FMT % f.log_likelihood,
                    json.dumps([[float(_FMT % v) for v in c] for c in f.state.centers]),
                ]
            )
    with open(path.with_suffix(".domain.json"), "w", encoding="utf-8") as fh:
        json.dump({"domain": e.domain.to_list(), "master_seed": e.master_seed}, fh)
    return path


def load_ensemble(path) -> NsEnsemble:
    path = Path(path)
    with open(path.with_suffix(".domain.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    fits = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            state = NsState(np.array(json.loads(row["centers"])), float(row["alpha"]), float(row["omega"]))
            fits.append(
                NsFit(state, float(row["log_posterior"]), float(row["log_likelihood"]), int(row["seed"]), np.array([], dtype=int))
            )
    return NsEnsemble(tuple(fits), Domain2D(*meta["domain"]), meta["master_seed"])
