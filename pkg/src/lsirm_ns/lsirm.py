"""Latent space item response model: probabilities, likelihood and posterior.

The logit of a positive response of respondent ``k`` to item ``i`` is
``theta_k + beta_i - gamma * ||z_k - w_i||`` with positions in the plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from .data import ResponseMatrix
from .errors import ContractError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class LsirmParams:
    beta: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    w: np.ndarray
    gamma: float = 1.0
    sigma_theta_sq: float = 1.0

    def __post_init__(self):
        for name in ("beta", "theta", "z", "w"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.z.shape != (self.theta.shape[0], 2) or self.w.shape != (self.beta.shape[0], 2):
            raise ContractError("position arrays must be N x 2 and P x 2")
        if self.gamma < 0:
            raise ContractError("gamma must be >= 0")

    @property
    def n_respondents(self):
        return self.theta.shape[0]

    @property
    def n_items(self):
        return self.beta.shape[0]


@dataclass(frozen=True)
class PriorSpec:
    sigma_beta: float = 1.0
    a_sigma: float = 0.001
    b_sigma: float = 0.001
    mu_gamma: float = 0.0
    sigma_gamma: float = 1.0
    # None means gamma is estimated under the log-normal prior
    gamma_fixed: float | None = 1.0

    def __post_init__(self):
        if min(self.sigma_beta, self.a_sigma, self.b_sigma, self.sigma_gamma) <= 0:
            raise ContractError("prior scale/shape/rate parameters must be > 0")

    @classmethod
    def from_config(cls, cfg):
        p, m = cfg.priors, cfg.mcmc
        return cls(
            sigma_beta=p.sigma_beta,
            a_sigma=p.a_sigma,
            b_sigma=p.b_sigma,
            mu_gamma=p.mu_gamma,
            sigma_gamma=p.sigma_gamma,
            gamma_fixed=m.gamma_fixed if m.gamma_mode == "fixed" else None,
        )


def logit_prob(theta_k, beta_i, gamma, z_k, w_i):
    """Probability of a positive response for one respondent-item pair."""
    if gamma < 0:
        raise ContractError("gamma must be >= 0")
    d = math.hypot(z_k[0] - w_i[0], z_k[1] - w_i[1])
    return float(expit(theta_k + beta_i - gamma * d))


def distance_matrix(z, w):
    """N x P Euclidean distances between respondent and item positions."""
    diff = z[:, None, :] - w[None, :, :]
    return np.sqrt(np.einsum("kij,kij->ki", diff, diff))


def linear_predictor(p: LsirmParams, dist=None):
    if dist is None:
        dist = distance_matrix(p.z, p.w)
    return p.theta[:, None] + p.beta[None, :] - p.gamma * dist


def probabilities(p: LsirmParams):
    return expit(linear_predictor(p))


def _values(x):
    return x.values if isinstance(x, ResponseMatrix) else np.asarray(x, dtype=float)


def cell_log_lik(x_values, eta):
    """Bernoulli log-mass per cell on the logit scale; missing cells give 0."""
    ll = x_values * eta - np.logaddexp(0.0, eta)
    return np.where(np.isnan(x_values), 0.0, ll)


def log_likelihood(x, p: LsirmParams) -> float:
    xv = _values(x)
    if xv.shape != (p.n_respondents, p.n_items):
        raise ContractError(f"response matrix {xv.shape} does not match parameters ({p.n_respondents}, {p.n_items})")
    return float(cell_log_lik(xv, linear_predictor(p)).sum())


def log_normal_pdf(x, var):
    """Sum of log N(x; 0, var) over all entries of ``x``."""
    x = np.asarray(x, dtype=float)
    return float(-0.5 * x.size * (_LOG_2PI + math.log(var)) - 0.5 * np.sum(x * x) / var)


def log_inv_gamma_pdf(s, a, b):
    return a * math.log(b) - gammaln(a) - (a + 1.0) * math.log(s) - b / s


def log_gamma_prior(gamma, mu, sigma):
    """Log-normal log-density of gamma (log gamma ~ N(mu, sigma^2))."""
    if gamma <= 0:
        return -math.inf
    lg = math.log(gamma)
    return -0.5 * (_LOG_2PI + 2 * math.log(sigma)) - 0.5 * ((lg - mu) / sigma) ** 2 - lg


def log_prior(p: LsirmParams, prior: PriorSpec) -> float:
    if p.sigma_theta_sq <= 0:
        raise ContractError("sigma_theta_sq must be > 0")
    lp = (
        log_normal_pdf(p.beta, prior.sigma_beta**2)
        + log_normal_pdf(p.theta, p.sigma_theta_sq)
        + log_normal_pdf(p.z, 1.0)
        + log_normal_pdf(p.w, 1.0)
        + log_inv_gamma_pdf(p.sigma_theta_sq, prior.a_sigma, prior.b_sigma)
    )
    if prior.gamma_fixed is None:
        lp += log_gamma_prior(p.gamma, prior.mu_gamma, prior.sigma_gamma)
    return lp


def log_posterior(x, p: LsirmParams, prior: PriorSpec) -> float:
    """Unnormalized log joint posterior; the gamma prior is dropped when gamma is fixed."""
    if p.sigma_theta_sq <= 0:
        raise ContractError("sigma_theta_sq must be > 0")
    return log_likelihood(x, p) + log_prior(p, prior)


def gibbs_sigma_theta(theta, a_sigma, b_sigma, rng) -> float:
    """Conjugate draw of the respondent-effect variance.

    Returns a draw from InvGamma(a + N/2, b + sum(theta^2)/2).
    """
    theta = np.asarray(theta, dtype=float)
    shape = a_sigma + 0.5 * theta.size
    scale = b_sigma + 0.5 * float(np.dot(theta, theta))
    return float(scale / rng.gamma(shape))


def gibbs_sigma_theta_many(theta, a_sigma, b_sigma, rng, size):
    theta = np.asarray(theta, dtype=float)
    shape = a_sigma + 0.5 * theta.size
    scale = b_sigma + 0.5 * float(np.dot(theta, theta))
    return scale / rng.gamma(shape, size=size)
