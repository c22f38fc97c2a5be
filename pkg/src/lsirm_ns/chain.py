"""Posterior chain containers and their on-disk format.

A chain directory holds ``manifest.json`` plus one CSV per parameter block.
Floats are written with 17 significant digits so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LatentConfig
from .errors import ContractError
from .lsirm import LsirmParams

FORMAT_VERSION = 1
_FMT = "%.17g"


@dataclass(frozen=True, eq=False)
class PosteriorChain:
    """Thinned post-burn-in draws.

    Arrays are indexed by draw first: ``beta`` (S, P), ``theta`` (S, N),
    ``z`` (S, N, 2), ``w`` (S, P, 2), ``gamma`` and ``sigma_theta_sq`` (S,).
    """

    beta: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    w: np.ndarray
    gamma: np.ndarray
    sigma_theta_sq: np.ndarray
    log_posterior: np.ndarray
    acceptance_rates: dict = field(default_factory=dict)
    step_sizes: dict = field(default_factory=dict)
    seed: int | None = None
    config: dict = field(default_factory=dict)
    respondent_ids: tuple = ()
    item_ids: tuple = ()
    group_label: str | None = None

    aligned = False

    def __post_init__(self):
        for name in ("beta", "theta", "z", "w", "gamma", "sigma_theta_sq", "log_posterior"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        s = self.beta.shape[0]
        n, p = self.theta.shape[1], self.beta.shape[1]
        expected = {
            "theta": (s, n),
            "z": (s, n, 2),
            "w": (s, p, 2),
            "gamma": (s,),
            "sigma_theta_sq": (s,),
            "log_posterior": (s,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ContractError(f"chain block {name} has shape {getattr(self, name).shape}, expected {shape}")
        if not self.respondent_ids:
            object.__setattr__(self, "respondent_ids", tuple(f"r{k + 1}" for k in range(n)))
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(f"i{i + 1}" for i in range(p)))

    def __len__(self):
        return self.beta.shape[0]

    @property
    def n_respondents(self):
        return self.theta.shape[1]

    @property
    def n_items(self):
        return self.beta.shape[1]

    def draw(self, s) -> LsirmParams:
        return LsirmParams(
            self.beta[s], self.theta[s], self.z[s], self.w[s], float(self.gamma[s]), float(self.sigma_theta_sq[s])
        )

    @property
    def draws(self):
        return [self.draw(s) for s in range(len(self))]

    def _blocks(self):
        return {
            "beta": self.beta,
            "theta": self.theta,
            "z": self.z,
            "w": self.w,
            "gamma": self.gamma,
            "sigma_theta_sq": self.sigma_theta_sq,
            "log_posterior": self.log_posterior,
        }

    def _meta(self):
        return {
            "acceptance_rates": self.acceptance_rates,
            "step_sizes": self.step_sizes,
            "seed": self.seed,
            "config": self.config,
            "respondent_ids": self.respondent_ids,
            "item_ids": self.item_ids,
            "group_label": self.group_label,
        }


@dataclass(frozen=True, eq=False)
class AlignedChain(PosteriorChain):
    """A chain whose positions have been rigidly aligned.

    ``rotations[s]`` and ``translations[s]`` map the original draw ``s`` onto
    the stored aligned positions via ``x -> x @ R.T + t``.
    """

    rotations: np.ndarray = None
    translations: np.ndarray = None
    reference_index: int = 0
    group_transform: dict | None = None

    aligned = True

    def __post_init__(self):
        super().__post_init__()
        s = len(self)
        rot = np.array(self.rotations if self.rotations is not None else np.tile(np.eye(2), (s, 1, 1)), dtype=float)
        tr = np.array(self.translations if self.translations is not None else np.zeros((s, 2)), dtype=float)
        if rot.shape != (s, 2, 2) or tr.shape != (s, 2):
            raise ContractError("transform log must hold one 2x2 rotation and one translation per draw")
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "translations", tr)

    def _meta(self):
        meta = super()._meta()
        meta["reference_index"] = int(self.reference_index)
        meta["group_transform"] = self.group_transform
        return meta


def posterior_mean_positions(chain: PosteriorChain):
    """Coordinate-wise posterior means ``(Z_bar, W_bar)`` of an aligned chain."""
    if not getattr(chain, "aligned", False):
        raise ContractError("posterior mean positions require an aligned chain (run align_chain first)")
    zbar = LatentConfig(chain.respondent_ids, chain.z.mean(axis=0))
    wbar = LatentConfig(chain.item_ids, chain.w.mean(axis=0))
    return zbar, wbar


def _save_table(path, arr):
    arr = np.asarray(arr, dtype=float)
    np.savetxt(path, arr.reshape(arr.shape[0], -1), fmt=_FMT, delimiter=",")


def _load_table(path, shape):
    arr = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    return arr.reshape(shape)


def save_chain(chain: PosteriorChain, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name, arr in chain._blocks().items():
        _save_table(directory / f"{name}.csv", arr)
        shapes[name] = list(arr.shape)
    if chain.aligned:
        _save_table(directory / "rotations.csv", chain.rotations)
        _save_table(directory / "translations.csv", chain.translations)
        shapes["rotations"] = list(chain.rotations.shape)
        shapes["translations"] = list(chain.translations.shape)
    manifest = {
        "format_version": FORMAT_VERSION,
        "aligned": chain.aligned,
        "n_draws": len(chain),
        "shapes": shapes,
        **chain._meta(),
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_chain(directory) -> PosteriorChain:
    directory = Path(directory)
    with open(directory / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    shapes = manifest["shapes"]
    blocks = {name: _load_table(directory / f"{name}.csv", shapes[name]) for name in PosteriorChain.__annotations__ if name in shapes}
    kwargs = dict(
        acceptance_rates=manifest["acceptance_rates"],
        step_sizes=manifest["step_sizes"],
        seed=manifest["seed"],
        config=manifest["config"],
        respondent_ids=tuple(manifest["respondent_ids"]),
        item_ids=tuple(manifest["item_ids"]),
        group_label=manifest["group_label"],
        **blocks,
    )
    if manifest["aligned"]:
        return AlignedChain(
            rotations=_load_table(directory / "rotations.csv", shapes["rotations"]),
            translations=_load_table(directory / "translations.csv", shapes["translations"]),
            reference_index=manifest["reference_index"],
            group_transform=manifest["group_transform"],
            **kwargs,
        )
    return PosteriorChain(**kwargs)
