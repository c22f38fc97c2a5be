"""Forward simulation of LSIRM responses and Thomas cluster patterns with known truth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import ResponseMatrix
from .errors import ContractError, LsirmNsError
from .lsirm import LsirmParams, linear_predictor


@dataclass(frozen=True, eq=False)
class LsirmTruth:
    params: LsirmParams
    seed: int

    def to_dict(self):
        p = self.params
        return {
            "seed": self.seed,
            "beta": p.beta.tolist(),
            "theta": p.theta.tolist(),
            "z": p.z.tolist(),
            "w": p.w.tolist(),
            "gamma": p.gamma,
            "sigma_theta_sq": p.sigma_theta_sq,
        }


def simulate_lsirm(
    n,
    p,
    seed,
    *,
    gamma=1.0,
    sigma_beta=1.0,
    sigma_theta_sq=1.0,
    beta=None,
    theta=None,
    z=None,
    w=None,
    group_label=None,
):
    """Simulate an N x P binary matrix from the LSIRM.

    Any of ``beta``, ``theta``, ``z``, ``w`` may be supplied; the rest are
    drawn from their priors (beta ~ N(0, sigma_beta^2), theta ~ N(0,
    sigma_theta_sq), positions ~ N(0, I)). Returns ``(ResponseMatrix, LsirmTruth)``.
    """
    if n < 2 or p < 2:
        raise ContractError("simulate_lsirm needs N >= 2 and P >= 2")
    rng = np.random.default_rng(seed)
    # draw every block unconditionally so supplying one block does not shift the others' streams
    draws = {
        "beta": rng.normal(0.0, sigma_beta, size=p),
        "theta": rng.normal(0.0, np.sqrt(sigma_theta_sq), size=n),
        "z": rng.normal(size=(n, 2)),
        "w": rng.normal(size=(p, 2)),
    }
    given = {"beta": beta, "theta": theta, "z": z, "w": w}
    blocks = {k: np.asarray(given[k], dtype=float) if given[k] is not None else draws[k] for k in draws}
    params = LsirmParams(blocks["beta"], blocks["theta"], blocks["z"], blocks["w"], float(gamma), float(sigma_theta_sq))
    prob = expit(linear_predictor(params))
    x = (rng.random((n, p)) < prob).astype(float)
    return ResponseMatrix.from_array(x, group_label=group_label), LsirmTruth(params, int(seed))


@dataclass(frozen=True, eq=False)
class ThomasTruth:
    parents: np.ndarray
    alpha: float
    omega: float
    domain: object
    seed: int
    points: np.ndarray = field(repr=False)
    parent_index: np.ndarray = field(repr=False)
    n_discarded: int = 0

    def to_dict(self):
        d = self.domain
        return {
            "parents": self.parents.tolist(),
            "alpha": self.alpha,
            "omega": self.omega,
            "domain": [d.x0, d.x1, d.y0, d.y1],
            "seed": self.seed,
            "n_points": len(self.points),
            "n_discarded": self.n_discarded,
        }


def simulate_thomas(domain, alpha, omega, seed, *, n_parents=None, kappa=None, parents=None, max_retries=100):
    """Simulate a Thomas cluster process on a rectangular domain.

    Parents come from ``parents`` (explicit), ``n_parents`` (fixed count,
    uniform) or ``kappa`` (Poisson(kappa |S|) count, uniform). Each parent has
    Poisson(alpha) offspring displaced by N(0, omega^2 I); offspring outside
    the domain are discarded and counted in ``n_discarded``.
    """
    if alpha <= 0 or omega <= 0:
        raise ContractError("alpha and omega must be > 0")
    rng = np.random.default_rng(seed)
    lo = np.array([domain.x0, domain.y0])
    span = np.array([domain.x1 - domain.x0, domain.y1 - domain.y0])
    if parents is not None:
        par = np.asarray(parents, dtype=float).reshape(-1, 2)
        if not domain.contains(par).all():
            raise ContractError("parents must lie inside the domain")
    elif n_parents is not None:
        par = lo + span * rng.random((int(n_parents), 2))
    elif kappa is not None:
        for _ in range(max_retries):
            m = rng.poisson(kappa * domain.area)
            if m > 0:
                break
        else:
            raise LsirmNsError(f"no parents realized in {max_retries} attempts (kappa |S| = {kappa * domain.area})")
        par = lo + span * rng.random((m, 2))
    else:
        raise ContractError("give one of parents, n_parents or kappa")
    counts = rng.poisson(alpha, size=len(par))
    idx = np.repeat(np.arange(len(par)), counts)
    pts = par[idx] + omega * rng.standard_normal((len(idx), 2))
    inside = domain.contains(pts)
    return ThomasTruth(
        parents=par,
        alpha=float(alpha),
        omega=float(omega),
        domain=domain,
        seed=int(seed),
        points=pts[inside],
        parent_index=idx[inside],
        n_discarded=int((~inside).sum()),
    )


def write_truth(truth, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def clustered_item_positions(n_items, n_clusters, seed, radius=1.2, spread=0.15):
    """Item positions around ``n_clusters`` parents evenly spaced on a circle.

    Items are dealt to parents in turn. Returns ``(positions, parents, parent_index)``.
    """
    if n_clusters < 1:
        raise ContractError("n_clusters must be >= 1")
    rng = np.random.default_rng(seed)
    angle = 2 * np.pi * np.arange(n_clusters) / n_clusters
    parents = radius * np.column_stack([np.cos(angle), np.sin(angle)])
    idx = np.arange(n_items) % n_clusters
    return parents[idx] + spread * rng.standard_normal((n_items, 2)), parents, idx


def simulate_groups(sim_cfg, master_seed):
    """Simulate ``sim_cfg.n_groups`` response matrices that share item parameters.

    Item effects and item positions are drawn once (positions clustered when
    ``sim_cfg.item_clusters > 0``); each group gets its own respondents. Returns
    a list of ``(name, ResponseMatrix, LsirmTruth)`` and a dict describing the
    shared item truth.
    """
    from .seeding import STREAM_SYNTH, derive_seed

    item_rng = np.random.default_rng(derive_seed(master_seed, STREAM_SYNTH, 0))
    p = sim_cfg.n_items
    beta = item_rng.normal(0.0, 1.0, size=p)
    shared = {"beta": beta.tolist()}
    if sim_cfg.item_clusters > 0:
        w, parents, idx = clustered_item_positions(
            p, sim_cfg.item_clusters, derive_seed(master_seed, STREAM_SYNTH, 1), sim_cfg.cluster_radius, sim_cfg.cluster_spread
        )
        shared.update(parents=parents.tolist(), parent_index=idx.tolist())
    else:
        w = item_rng.normal(size=(p, 2))
    shared["w"] = w.tolist()
    out = []
    for g in range(sim_cfg.n_groups):
        name = f"group{g + 1}"
        x, truth = simulate_lsirm(
            sim_cfg.n_respondents,
            p,
            derive_seed(master_seed, STREAM_SYNTH, 100 + g),
            gamma=sim_cfg.gamma,
            sigma_theta_sq=sim_cfg.sigma_theta_sq,
            beta=beta,
            w=w,
            group_label=name,
        )
        out.append((name, x, truth))
    return out, shared
