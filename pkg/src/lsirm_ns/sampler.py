"""Metropolis-Hastings-within-Gibbs sampler for the LSIRM posterior.

One sweep updates, in order: every beta_i, every theta_k, every z_k, every
w_i (random-walk MH), sigma_theta^2 (conjugate Gibbs), then log gamma when
gamma is estimated. Because beta_i only enters column i (and theta_k, z_k only
row k, w_i only column i), each block is updated with independent per-element
accept/reject decisions computed in one vectorized pass; this is the same
kernel as looping over the elements one at a time.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.special import logit

from .chain import PosteriorChain
from .config import RunConfig
from .data import ResponseMatrix
from .errors import InitializationError
from .lsirm import (
    LsirmParams,
    PriorSpec,
    cell_log_lik,
    distance_matrix,
    gibbs_sigma_theta,
    log_gamma_prior,
    log_posterior,
)
from .seeding import STREAM_CHAIN, derive_seed

log = logging.getLogger(__name__)

TUNE_TARGET = 0.4
BLOCKS = ("beta", "theta", "z", "w", "log_gamma")


def thin_indices(n_iter, burn_in, thin_to):
    """Iteration indices kept: ``thin_to`` evenly spaced post-burn-in draws, ending at the last."""
    n_post = n_iter - burn_in
    j = np.arange(1, thin_to + 1)
    return burn_in + (j * n_post) // thin_to - 1


def initial_params(x: ResponseMatrix, cfg: RunConfig, rng) -> LsirmParams:
    xv = x.values
    mask = x.mask
    obs = np.where(mask, xv, 0.0)
    n_item = mask.sum(axis=0)
    n_resp = mask.sum(axis=1)
    p_item = (obs.sum(axis=0) + 0.5) / (n_item + 1.0)
    p_resp = (obs.sum(axis=1) + 0.5) / (n_resp + 1.0)
    p_all = (obs.sum() + 0.5) / (mask.sum() + 1.0)
    beta = np.clip(logit(p_item), -3, 3)
    # respondent logits are centred on the overall logit so theta + beta is not double counted
    theta = np.clip(logit(p_resp) - logit(p_all), -3, 3)
    n, p = xv.shape
    z = rng.normal(0.0, 0.5, size=(n, 2))
    w = rng.normal(0.0, 0.5, size=(p, 2))
    if cfg.mcmc.gamma_mode == "fixed":
        gamma = cfg.mcmc.gamma_fixed
    else:
        gamma = math.exp(cfg.priors.mu_gamma)
    return LsirmParams(beta, theta, z, w, gamma, 1.0)


class SweepState:
    """Mutable sampler state with the cached N x P linear predictor."""

    def __init__(self, xv, params: LsirmParams):
        self.xv = xv
        self.beta = params.beta.copy()
        self.theta = params.theta.copy()
        self.z = params.z.copy()
        self.w = params.w.copy()
        self.gamma = float(params.gamma)
        self.s2 = float(params.sigma_theta_sq)
        self.refresh()

    def refresh(self):
        self.dist = distance_matrix(self.z, self.w)
        self.eta = self.theta[:, None] + self.beta[None, :] - self.gamma * self.dist
        self.ll = cell_log_lik(self.xv, self.eta)

    def set_data(self, xv):
        self.xv = xv
        self.ll = cell_log_lik(xv, self.eta)

    def params(self) -> LsirmParams:
        return LsirmParams(self.beta.copy(), self.theta.copy(), self.z.copy(), self.w.copy(), self.gamma, self.s2)


def sweep(st: SweepState, prior: PriorSpec, steps: dict, rng, accepted: dict):
    """One full MH-within-Gibbs sweep; ``accepted`` counts are incremented in place."""
    xv = st.xv
    n, p = st.eta.shape
    var_beta = prior.sigma_beta**2

    # beta: column-wise
    prop = st.beta + steps["beta"] * rng.standard_normal(p)
    eta_p = st.eta + (prop - st.beta)[None, :]
    ll_p = cell_log_lik(xv, eta_p)
    log_r = (ll_p - st.ll).sum(axis=0) - 0.5 * (prop**2 - st.beta**2) / var_beta
    acc = np.log(rng.random(p)) < log_r
    st.beta = np.where(acc, prop, st.beta)
    st.eta[:, acc] = eta_p[:, acc]
    st.ll[:, acc] = ll_p[:, acc]
    accepted["beta"] += int(acc.sum())

    # theta: row-wise
    prop = st.theta + steps["theta"] * rng.standard_normal(n)
    eta_p = st.eta + (prop - st.theta)[:, None]
    ll_p = cell_log_lik(xv, eta_p)
    log_r = (ll_p - st.ll).sum(axis=1) - 0.5 * (prop**2 - st.theta**2) / st.s2
    acc = np.log(rng.random(n)) < log_r
    st.theta = np.where(acc, prop, st.theta)
    st.eta[acc] = eta_p[acc]
    st.ll[acc] = ll_p[acc]
    accepted["theta"] += int(acc.sum())

    # z: row-wise bivariate proposals
    prop = st.z + steps["z"] * rng.standard_normal((n, 2))
    dist_p = distance_matrix(prop, st.w)
    eta_p = st.eta - st.gamma * (dist_p - st.dist)
    ll_p = cell_log_lik(xv, eta_p)
    log_r = (ll_p - st.ll).sum(axis=1) - 0.5 * ((prop**2).sum(axis=1) - (st.z**2).sum(axis=1))
    acc = np.log(rng.random(n)) < log_r
    st.z[acc] = prop[acc]
    st.dist[acc] = dist_p[acc]
    st.eta[acc] = eta_p[acc]
    st.ll[acc] = ll_p[acc]
    accepted["z"] += int(acc.sum())

    # w: column-wise bivariate proposals
    prop = st.w + steps["w"] * rng.standard_normal((p, 2))
    dist_p = distance_matrix(st.z, prop)
    eta_p = st.eta - st.gamma * (dist_p - st.dist)
    ll_p = cell_log_lik(xv, eta_p)
    log_r = (ll_p - st.ll).sum(axis=0) - 0.5 * ((prop**2).sum(axis=1) - (st.w**2).sum(axis=1))
    acc = np.log(rng.random(p)) < log_r
    st.w[acc] = prop[acc]
    st.dist[:, acc] = dist_p[:, acc]
    st.eta[:, acc] = eta_p[:, acc]
    st.ll[:, acc] = ll_p[:, acc]
    accepted["w"] += int(acc.sum())

    st.s2 = gibbs_sigma_theta(st.theta, prior.a_sigma, prior.b_sigma, rng)

    if prior.gamma_fixed is None:
        lg = math.log(st.gamma) if st.gamma > 0 else -math.inf
        lg_p = lg + steps["log_gamma"] * rng.standard_normal()
        g_p = math.exp(lg_p)
        eta_p = st.theta[:, None] + st.beta[None, :] - g_p * st.dist
        ll_p = cell_log_lik(xv, eta_p)
        # random walk on log gamma: the target picks up the Jacobian gamma
        log_r = (
            ll_p.sum() - st.ll.sum()
            + log_gamma_prior(g_p, prior.mu_gamma, prior.sigma_gamma) + lg_p
            - log_gamma_prior(st.gamma, prior.mu_gamma, prior.sigma_gamma) - lg
        )
        if np.log(rng.random()) < log_r:
            st.gamma = g_p
            st.eta = eta_p
            st.ll = ll_p
            accepted["log_gamma"] += 1


def sample_posterior(x: ResponseMatrix, cfg: RunConfig, seed: int, init: LsirmParams | None = None) -> PosteriorChain:
    """Run one chain and return its thinned post-burn-in draws."""
    m = cfg.mcmc
    prior = PriorSpec.from_config(cfg)
    estimate_gamma = prior.gamma_fixed is None
    rng = np.random.default_rng(seed)

    mask = x.mask
    if (~mask).all(axis=0).any() or (~mask).all(axis=1).any():
        warnings.warn("response matrix has an all-missing row or column", RuntimeWarning, stacklevel=2)

    p0 = init if init is not None else initial_params(x, cfg, rng)
    lp0 = log_posterior(x, p0, prior)
    if not np.isfinite(lp0):
        raise InitializationError(f"log posterior at initialization is not finite ({lp0})")
    st = SweepState(x.values, p0)
    n, p = st.eta.shape

    keep = thin_indices(m.n_iter, m.burn_in, m.thin_to)
    n_keep = len(keep)
    out = {
        "beta": np.empty((n_keep, p)),
        "theta": np.empty((n_keep, n)),
        "z": np.empty((n_keep, n, 2)),
        "w": np.empty((n_keep, p, 2)),
        "gamma": np.empty(n_keep),
        "sigma_theta_sq": np.empty(n_keep),
        "log_posterior": np.empty(n_keep),
    }
    steps = {
        "beta": m.step_beta,
        "theta": m.step_theta,
        "z": m.step_z,
        "w": m.step_w,
        "log_gamma": m.step_log_gamma,
    }
    sizes = {"beta": p, "theta": n, "z": n, "w": p, "log_gamma": 1}
    accepted = dict.fromkeys(BLOCKS, 0)
    window = dict.fromkeys(BLOCKS, 0)
    slot = 0
    for it in range(m.n_iter):
        if it == m.burn_in:
            accepted = dict.fromkeys(BLOCKS, 0)
        elif m.tune and 0 < it < m.burn_in and it % m.tune_interval == 0:
            for block in BLOCKS:
                rate = window[block] / (m.tune_interval * sizes[block])
                steps[block] *= math.exp(2.0 * (rate - TUNE_TARGET))
            window = dict.fromkeys(BLOCKS, 0)
        before = dict(accepted)

        sweep(st, prior, steps, rng, accepted)

        for block in BLOCKS:
            window[block] += accepted[block] - before[block]
        # the incremental predictor can drift by rounding; rebuild it periodically
        if it % 50 == 49:
            st.refresh()

        if slot < n_keep and it == keep[slot]:
            params = st.params()
            out["beta"][slot] = params.beta
            out["theta"][slot] = params.theta
            out["z"][slot] = params.z
            out["w"][slot] = params.w
            out["gamma"][slot] = params.gamma
            out["sigma_theta_sq"][slot] = params.sigma_theta_sq
            out["log_posterior"][slot] = log_posterior(x, params, prior)
            slot += 1

    # rates describe the frozen post-burn-in kernel that produced the stored draws
    n_rate = m.n_iter - m.burn_in
    blocks = ["beta", "theta", "z", "w"] + (["log_gamma"] if estimate_gamma else [])
    rates = {b: accepted[b] / (n_rate * sizes[b]) for b in blocks}
    log.info("chain seed=%s acceptance %s", seed, rates)
    return PosteriorChain(
        **out,
        acceptance_rates=rates,
        step_sizes={b: steps[b] for b in blocks},
        seed=int(seed),
        config=cfg.to_dict(),
        respondent_ids=x.respondent_ids,
        item_ids=x.item_ids,
        group_label=x.group_label,
    )


def _run_one(args):
    x, cfg, seed = args
    return sample_posterior(x, cfg, seed)


def sample_chains(x: ResponseMatrix, cfg: RunConfig, master_seed: int, n_chains: int | None = None, n_workers: int = 1):
    """Run independent chains whose seeds derive from ``master_seed`` by chain index."""
    n_chains = cfg.mcmc.n_chains if n_chains is None else n_chains
    seeds = [derive_seed(master_seed, STREAM_CHAIN, c) for c in range(n_chains)]
    jobs = [(x, cfg, s) for s in seeds]
    if n_workers > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]
