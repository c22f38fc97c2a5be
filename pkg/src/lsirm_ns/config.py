"""Run configuration with documented defaults.

Config files are TOML. Every key is optional; omitted keys take the defaults
below. Example::

    seed = 20240601
    dichotomize_threshold = 4

    [mcmc]
    n_iter = 6000
    burn_in = 1000

    [ns]
    n_runs = 200

    [[data.groups]]
    name = "cohort_a"
    path = "cohort_a.csv"
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 60000
    burn_in: int = 10000
    thin_to: int = 5000
    step_beta: float = 0.3
    step_theta: float = 0.3
    step_z: float = 0.2
    step_w: float = 0.2
    step_log_gamma: float = 0.1
    gamma_mode: str = "fixed"  # "fixed" or "estimated"
    gamma_fixed: float = 1.0
    n_chains: int = 1
    align_on: str = "stacked"  # "stacked" (Z;W) or "items" (W only)
    # adapt step sizes during burn-in only; the kernel is frozen before any draw is stored
    tune: bool = True
    tune_interval: int = 100


@dataclass(frozen=True)
class PriorConfig:
    sigma_beta: float = 1.0
    a_sigma: float = 0.001
    b_sigma: float = 0.001
    mu_gamma: float = 0.0
    sigma_gamma: float = 1.0


@dataclass(frozen=True)
class NsConfig:
    n_runs: int = 1000
    n_iter: int = 20000
    burn_in: int = 5000
    m_min: int = 2
    m_max: int = 10
    alpha_bounds: tuple | None = None
    omega_bounds: tuple | None = None
    # used when omega_bounds is unset: fractions of sqrt(|S|)
    omega_bounds_frac: tuple = (0.01, 0.25)
    margin: float = 0.10
    # fit in coordinates rescaled so the domain has unit area
    standardize: bool = True
    tau: float = 0.10
    kde_bandwidth: object = "silverman"  # "silverman" or a positive float
    grid_size: int = 200
    move_step_frac: float = 0.025
    alpha_step_frac: float = 0.05
    omega_step_frac: float = 0.05
    p_birth: float = 1 / 3
    p_death: float = 1 / 3
    p_move: float = 1 / 3
    bic_penalty: str = "2M+2"  # or "2M", "3M"
    # per-run summary: "modal" (best state at the most visited M) or "map"
    run_summary: str = "modal"
    n_workers: int = 1


@dataclass(frozen=True)
class ReportConfig:
    highlight_threshold: float = 0.3
    match_flag_distance: float = 0.5
    ppc_n_rep: int = 200
    plots: bool = True


@dataclass(frozen=True)
class GroupSpec:
    name: str
    path: str
    layout: str = "wide"
    binary: bool = False


@dataclass(frozen=True)
class DataConfig:
    groups: tuple = ()


@dataclass(frozen=True)
class SimulateConfig:
    n_respondents: int = 300
    n_items: int = 30
    n_groups: int = 1
    gamma: float = 1.0
    sigma_theta_sq: float = 1.0
    # > 0: item positions drawn around this many parents instead of N(0, I)
    item_clusters: int = 0
    cluster_spread: float = 0.15
    cluster_radius: float = 1.2


@dataclass(frozen=True)
class RunConfig:
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    priors: PriorConfig = field(default_factory=PriorConfig)
    ns: NsConfig = field(default_factory=NsConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    data: DataConfig = field(default_factory=DataConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    seed: int = 20240601
    dichotomize_threshold: int = 4

    def __post_init__(self):
        validate(self)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def validate(cfg: RunConfig):
    problems = []
    m, ns, pr = cfg.mcmc, cfg.ns, cfg.priors

    def need(cond, msg):
        if not cond:
            problems.append(msg)

    need(m.n_iter > 0, "mcmc.n_iter must be positive")
    need(0 <= m.burn_in < m.n_iter, "mcmc.burn_in must satisfy 0 <= burn_in < n_iter")
    need(0 < m.thin_to <= m.n_iter - m.burn_in, "mcmc.thin_to must satisfy 0 < thin_to <= n_iter - burn_in")
    for name in ("step_beta", "step_theta", "step_z", "step_w", "step_log_gamma"):
        need(getattr(m, name) > 0, f"mcmc.{name} must be > 0")
    need(m.gamma_mode in ("fixed", "estimated"), "mcmc.gamma_mode must be 'fixed' or 'estimated'")
    need(m.gamma_fixed >= 0, "mcmc.gamma_fixed must be >= 0")
    need(m.n_chains >= 1, "mcmc.n_chains must be >= 1")
    need(m.tune_interval >= 10, "mcmc.tune_interval must be >= 10")
    need(m.align_on in ("stacked", "items"), "mcmc.align_on must be 'stacked' or 'items'")
    for name in ("sigma_beta", "a_sigma", "b_sigma", "sigma_gamma"):
        need(getattr(pr, name) > 0, f"priors.{name} must be > 0")
    need(ns.n_runs >= 2, "ns.n_runs must be >= 2")
    need(ns.n_iter >= 1000, "ns.n_iter must be >= 1000")
    need(0 <= ns.burn_in < ns.n_iter, "ns.burn_in must satisfy 0 <= burn_in < n_iter")
    need(ns.m_min >= 1, "ns.m_min must be >= 1")
    need(ns.m_min < ns.m_max, "ns.m_min must be < ns.m_max")
    need(0 < ns.tau < 1, "ns.tau must satisfy 0 < tau < 1")
    need(ns.margin >= 0, "ns.margin must be >= 0")
    need(ns.grid_size >= 10, "ns.grid_size must be >= 10")
    for name in ("move_step_frac", "alpha_step_frac", "omega_step_frac"):
        need(getattr(ns, name) > 0, f"ns.{name} must be > 0")
    probs = (ns.p_birth, ns.p_death, ns.p_move)
    need(all(p >= 0 for p in probs) and math.isclose(sum(probs), 1.0), "ns.p_birth + p_death + p_move must equal 1")
    need(ns.p_birth > 0 and ns.p_death > 0, "ns.p_birth and ns.p_death must be > 0")
    need(ns.bic_penalty in ("2M+2", "2M", "3M"), "ns.bic_penalty must be one of 2M+2, 2M, 3M")
    need(ns.run_summary in ("modal", "map"), "ns.run_summary must be 'modal' or 'map'")
    need(ns.n_workers >= 1, "ns.n_workers must be >= 1")
    for name in ("alpha_bounds", "omega_bounds", "omega_bounds_frac"):
        b = getattr(ns, name)
        if b is not None:
            need(len(b) == 2 and 0 < b[0] < b[1], f"ns.{name} must be [lower, upper] with 0 < lower < upper")
    bw = ns.kde_bandwidth
    need(bw == "silverman" or (isinstance(bw, (int, float)) and bw > 0), "ns.kde_bandwidth must be 'silverman' or > 0")
    need(cfg.report.highlight_threshold >= 0, "report.highlight_threshold must be >= 0")
    need(cfg.report.ppc_n_rep >= 20, "report.ppc_n_rep must be >= 20")
    need(cfg.dichotomize_threshold in (2, 3, 4, 5), "dichotomize_threshold must be in 2..5")
    need(0 <= cfg.seed < 2**64, "seed must be a 64-bit unsigned integer")
    for g in cfg.data.groups:
        need(g.layout in ("wide", "long"), f"data group {g.name!r}: layout must be wide or long")
    names = [g.name for g in cfg.data.groups]
    need(len(set(names)) == len(names), "data group names must be unique")
    need(len(names) <= 2, "at most two data groups are supported")
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(problems))


_SECTIONS = {
    "mcmc": McmcConfig,
    "priors": PriorConfig,
    "ns": NsConfig,
    "report": ReportConfig,
    "simulate": SimulateConfig,
}


def _build(cls, values, section):
    if not isinstance(values, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def config_from_dict(tree: dict, base_dir=None) -> RunConfig:
    tree = dict(tree)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in tree:
            kwargs[name] = _build(cls, tree.pop(name), name)
    if "data" in tree:
        data = tree.pop("data")
        groups = []
        for g in data.get("groups", []):
            g = dict(g)
            if base_dir is not None and "path" in g and not Path(g["path"]).is_absolute():
                g["path"] = str(Path(base_dir) / g["path"])
            groups.append(_build(GroupSpec, g, "data.groups"))
        extra = set(data) - {"groups"}
        if extra:
            raise ConfigError(f"unknown key(s) in [data]: {', '.join(sorted(extra))}")
        kwargs["data"] = DataConfig(tuple(groups))
    for key in ("seed", "dichotomize_threshold"):
        if key in tree:
            kwargs[key] = tree.pop(key)
    if tree:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(tree))}")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    """Read a TOML config; data paths are resolved relative to the file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(tree, base_dir=path.parent)


def _drop_none(obj):
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_drop_none(v) for v in obj]
    return obj


def save_config(cfg: RunConfig, path, relative_to=None):
    """Write ``cfg`` as TOML; group paths are made relative to ``relative_to`` when given."""
    import tomli_w

    tree = _drop_none(cfg.to_dict())
    if relative_to is not None:
        for g in tree["data"]["groups"]:
            p = Path(g["path"])
            if p.is_absolute():
                try:
                    g["path"] = str(p.relative_to(Path(relative_to).resolve()))
                except ValueError:
                    pass
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        tomli_w.dump(tree, fh)
    return path
