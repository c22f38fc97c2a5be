"""Rigid (rotation/reflection + translation) alignment of latent configurations.

Step one aligns every draw of a chain to the draw with the highest log
posterior. Step two maps one group's chain onto another group's frame using
the transform fitted between their posterior-mean item configurations.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .chain import AlignedChain, PosteriorChain, posterior_mean_positions
from .data import LatentConfig
from .errors import ContractError, DegeneracyError


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> x @ rotation.T + translation`` for row-vector points."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float)
        if r.shape != (2, 2) or t.shape != (2,):
            raise ContractError("rotation must be 2x2 and translation a 2-vector")
        if not np.allclose(r.T @ r, np.eye(2), atol=1e-10):
            raise ContractError("rotation matrix is not orthogonal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(2), np.zeros(2))

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, inner: RigidTransform) -> RigidTransform:
        """The transform that applies ``inner`` first, then ``self``."""
        return RigidTransform(self.rotation @ inner.rotation, inner.translation @ self.rotation.T + self.translation)

    @property
    def determinant(self):
        return float(np.linalg.det(self.rotation))

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


def _coords(cfg):
    return cfg.coords if isinstance(cfg, LatentConfig) else np.asarray(cfg, dtype=float)


def procrustes_fit(source, target) -> RigidTransform:
    """Orthogonal Procrustes fit (no scaling) of ``source`` onto ``target``."""
    if isinstance(source, LatentConfig) and isinstance(target, LatentConfig) and source.labels != target.labels:
        raise ContractError("source and target must carry the same labels in the same order")
    src, tgt = _coords(source), _coords(target)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ContractError(f"configurations must both be n x 2 with equal n, got {src.shape} and {tgt.shape}")
    if src.shape[0] < 2:
        raise ContractError("Procrustes fit needs at least 2 points")
    mu_s, mu_t = src.mean(axis=0), tgt.mean(axis=0)
    a, b = src - mu_s, tgt - mu_t
    if np.max(np.abs(a)) <= 1e-12 * max(1.0, np.max(np.abs(src))):
        raise DegeneracyError("source configuration is degenerate (all points identical)")
    u, _, vt = np.linalg.svd(a.T @ b)
    # rows: a @ (u @ vt) ~ b, so the column-vector rotation is its transpose
    rot = (u @ vt).T
    return RigidTransform(rot, mu_t - mu_s @ rot.T)


def procrustes_residual(transform: RigidTransform, source, target) -> float:
    """Sum of squared distances between the transformed source and the target."""
    d = transform.apply(_coords(source)) - _coords(target)
    return float(np.sum(d * d))


def _stack(z, w, fit_on):
    return np.vstack([z, w]) if fit_on == "stacked" else w


def align_chain(chain: PosteriorChain, fit_on: str = "stacked") -> AlignedChain:
    """Align every draw to the maximum-log-posterior draw (earliest on ties).

    ``fit_on="stacked"`` fits each draw's (Z; W) jointly; ``"items"`` fits W
    only. Either way one transform per draw moves both Z and W.
    """
    if len(chain) == 0:
        raise ContractError("cannot align an empty chain")
    if fit_on not in ("stacked", "items"):
        raise ContractError("fit_on must be 'stacked' or 'items'")
    ref = int(np.argmax(chain.log_posterior))
    target = _stack(chain.z[ref], chain.w[ref], fit_on)
    s = len(chain)
    rots = np.empty((s, 2, 2))
    trans = np.empty((s, 2))
    z_out = np.empty_like(chain.z)
    w_out = np.empty_like(chain.w)
    for i in range(s):
        if i == ref:
            t = RigidTransform.identity()
        else:
            t = procrustes_fit(_stack(chain.z[i], chain.w[i], fit_on), target)
        z_out[i] = t.apply(chain.z[i]) if i != ref else chain.z[i]
        w_out[i] = t.apply(chain.w[i]) if i != ref else chain.w[i]
        rots[i], trans[i] = t.rotation, t.translation
    return _rebuild(chain, z_out, w_out, rots, trans, ref)


def _rebuild(chain, z, w, rots, trans, ref, group_transform=None):
    fields = {f.name: getattr(chain, f.name) for f in dataclasses.fields(PosteriorChain)}
    fields.update(z=z, w=w)
    return AlignedChain(
        **fields,
        rotations=rots,
        translations=trans,
        reference_index=ref,
        group_transform=group_transform,
    )


def align_across_groups(reference_group: AlignedChain, moving_group: AlignedChain) -> AlignedChain:
    """Map ``moving_group`` into the frame of ``reference_group``.

    A single transform is fitted from the moving group's posterior-mean item
    positions to the reference group's and applied to every draw's W and Z.
    """
    if not (reference_group.aligned and moving_group.aligned):
        raise ContractError("both chains must already be aligned within group")
    if reference_group.n_items != moving_group.n_items:
        raise ContractError(
            f"item counts differ ({reference_group.n_items} vs {moving_group.n_items}); groups must share items"
        )
    _, w_ref = posterior_mean_positions(reference_group)
    _, w_mov = posterior_mean_positions(moving_group)
    g = procrustes_fit(w_mov.coords, w_ref.coords)
    z = moving_group.z @ g.rotation.T + g.translation
    w = moving_group.w @ g.rotation.T + g.translation
    rots = np.empty_like(moving_group.rotations)
    trans = np.empty_like(moving_group.translations)
    for i in range(len(moving_group)):
        c = g.compose(RigidTransform(moving_group.rotations[i], moving_group.translations[i]))
        rots[i], trans[i] = c.rotation, c.translation
    return _rebuild(moving_group, z, w, rots, trans, moving_group.reference_index, group_transform=g.to_dict())
