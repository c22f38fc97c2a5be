"""Convergence diagnostics and posterior predictive checks for LSIRM chains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .chain import PosteriorChain
from .data import ResponseMatrix
from .errors import ContractError
from .lsirm import linear_predictor


def gelman_rubin(samples):
    """Potential scale reduction factor for an (m chains, n draws, ...) array.

    Classic formula without splitting: ``sqrt(((n-1)/n W + B/n) / W)``.
    Entries with zero within-chain variance are returned as nan.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim < 2 or x.shape[0] < 2:
        raise ContractError("need at least two chains")
    n = x.shape[1]
    if n < 4:
        raise ContractError("chains must hold at least 4 draws")
    means = x.mean(axis=1)
    b = n * means.var(axis=0, ddof=1)
    w = x.var(axis=1, ddof=1).mean(axis=0)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(w > 0, np.sqrt(var_plus / w), np.nan)


@dataclass(frozen=True, eq=False)
class RhatSummary:
    values: dict  # parameter name -> R-hat
    method: str  # "multi-chain" or "split-chain"
    n_chains: int
    n_draws: int

    def array(self):
        return np.array([v for v in self.values.values() if np.isfinite(v)])

    def fraction_below(self, limit=1.05):
        a = self.array()
        return float(np.mean(a < limit)) if len(a) else float("nan")

    def extremes(self):
        a = self.array()
        if not len(a):
            return {"min": None, "max": None, "worst": None}
        finite = {k: v for k, v in self.values.items() if np.isfinite(v)}
        worst = max(finite, key=finite.get)
        return {"min": float(a.min()), "max": float(a.max()), "worst": worst}

    def to_dict(self):
        return {
            "method": self.method,
            "n_chains": self.n_chains,
            "n_draws": self.n_draws,
            "fraction_below_1.05": self.fraction_below(1.05),
            **self.extremes(),
        }


def _scalar_blocks(chains, with_positions):
    c0 = chains[0]
    blocks = {
        "beta": (np.stack([c.beta for c in chains]), c0.item_ids),
        "theta": (np.stack([c.theta for c in chains]), c0.respondent_ids),
        "sigma_theta_sq": (np.stack([c.sigma_theta_sq for c in chains])[..., None], None),
        "gamma": (np.stack([c.gamma for c in chains])[..., None], None),
    }
    if with_positions:
        for name, ids in (("z", c0.respondent_ids), ("w", c0.item_ids)):
            arr = np.stack([getattr(c, name) for c in chains])
            for d, axis in enumerate("xy"):
                blocks[f"{name}_{axis}"] = (arr[..., d], ids)
    return blocks


def rhat(chains, positions: bool | None = None) -> RhatSummary:
    """R-hat per scalar parameter.

    Several chains are compared directly; a single chain is split into two
    halves. Positions are included only for aligned chains. Several aligned
    chains have separate reference frames, so chains after the first are
    first mapped onto the first chain's frame by their mean item positions.
    Constant parameters (a fixed gamma) are omitted.
    """
    if isinstance(chains, PosteriorChain):
        chains = [chains]
    chains = list(chains)
    if not chains:
        raise ContractError("no chains given")
    lengths = {len(c) for c in chains}
    if len(lengths) != 1:
        raise ContractError(f"chains must have equal length, got {sorted(lengths)}")
    n = lengths.pop()
    all_aligned = all(c.aligned for c in chains)
    positions = all_aligned if positions is None else positions
    if positions and not all_aligned:
        raise ContractError("positions can only be diagnosed on aligned chains")
    if positions and len(chains) > 1:
        from .alignment import align_across_groups

        chains = [chains[0]] + [align_across_groups(chains[0], c) for c in chains[1:]]

    if len(chains) == 1:
        if n < 4:
            raise ContractError("chains must hold at least 4 draws")
        half = n // 2
        method = "split-chain"
    else:
        method = "multi-chain"
    values = {}
    for name, (arr, ids) in _scalar_blocks(chains, positions).items():
        if method == "split-chain":
            arr = np.stack([arr[0, :half], arr[0, half : 2 * half]])
        if np.all(arr == arr.reshape(-1, *arr.shape[2:])[0]):
            continue
        r = gelman_rubin(arr)
        if ids is None:
            values[name] = float(r[0])
        else:
            for label, v in zip(ids, r):
                values[f"{name}[{label}]"] = float(v)
    return RhatSummary(values, method, len(chains), n)


@dataclass(frozen=True, eq=False)
class PpcResult:
    item_ids: tuple
    observed: np.ndarray
    replicate_mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    covered: np.ndarray
    n_rep: int
    seed: int

    @property
    def coverage(self):
        return float(np.mean(self.covered))

    def to_dict(self):
        return {
            "n_rep": self.n_rep,
            "seed": self.seed,
            "coverage": self.coverage,
            "items": {
                i: {"observed": o, "replicate_mean": m, "lower": lo, "upper": hi, "covered": bool(c)}
                for i, o, m, lo, hi, c in zip(
                    self.item_ids,
                    self.observed.tolist(),
                    self.replicate_mean.tolist(),
                    self.lower.tolist(),
                    self.upper.tolist(),
                    self.covered,
                )
            },
        }


def posterior_predictive_check(chain: PosteriorChain, x: ResponseMatrix, n_rep: int = 200, seed: int = 0) -> PpcResult:
    """Per-item positive proportions of ``n_rep`` replicate matrices against the data.

    Replicates are drawn at evenly spaced stored draws and cover the observed
    cells only, so missingness is the same as in the data. Items with no
    observed cells are dropped from the coverage.
    """
    if n_rep < 20:
        raise ContractError("n_rep must be >= 20")
    if (chain.n_respondents, chain.n_items) != x.shape:
        raise ContractError("chain and data dimensions differ")
    rng = np.random.default_rng(seed)
    mask = x.mask
    n_obs = mask.sum(axis=0)
    has = n_obs > 0
    idx = np.linspace(0, len(chain) - 1, n_rep).round().astype(int)
    reps = np.empty((n_rep, x.shape[1]))
    for r, s in enumerate(idx):
        prob = expit(linear_predictor(chain.draw(s)))
        sim = (rng.random(prob.shape) < prob) & mask
        with np.errstate(invalid="ignore", divide="ignore"):
            reps[r] = sim.sum(axis=0) / n_obs
    with np.errstate(invalid="ignore", divide="ignore"):
        observed = np.where(mask, x.values, 0.0).sum(axis=0) / n_obs
    lo, hi = np.quantile(reps[:, has], [0.025, 0.975], axis=0)
    lower = np.full(x.shape[1], np.nan)
    upper = np.full(x.shape[1], np.nan)
    lower[has], upper[has] = lo, hi
    covered = (observed >= lower) & (observed <= upper)
    item_ids = tuple(i for i, h in zip(x.item_ids, has) if h)
    return PpcResult(
        item_ids,
        observed[has],
        reps[:, has].mean(axis=0),
        lower[has],
        upper[has],
        covered[has],
        int(n_rep),
        int(seed),
    )
