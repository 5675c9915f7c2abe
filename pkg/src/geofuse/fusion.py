"""Fuse per-panorama attention-reduced features into a dense, geo-aligned grid.

For every target cell each panorama is reduced to one vector with its own
attention map, and the panoramas are mixed with weights
``softmax_k(total attention of panorama k)``. Padding slots (invalid
panoramas) get a ``-inf`` total, hence exactly zero weight.
"""
from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np

from . import attention as ga
from .autodiff import ops
from .autodiff.tensor import Tensor
from .errors import ContractViolation
from .geo import GeoGrid, GeoLocation, RayField


@dataclasses.dataclass
class PanoSet:
    features: Sequence[Tensor]  # K x [C, H, W]
    cameras: Sequence[GeoLocation]
    valid: Sequence[bool]

    def __post_init__(self):
        if not (len(self.features) == len(self.cameras) == len(self.valid)):
            raise ContractViolation("panorama features, cameras and flags differ in length")


@dataclasses.dataclass
class DenseGrid:
    features: Tensor  # C x G x G (B x C x G x G in the batched path)
    weights: np.ndarray  # K x G x G (B x K x G x G)
    attention: Optional[Tensor] = None  # B x T x K x H x W


def mask_logits(valid: np.ndarray, dtype=np.float32) -> np.ndarray:
    """0 for valid panoramas and ``-inf`` for padding slots."""
    valid = np.asarray(valid, dtype=bool)
    return np.where(valid, 0.0, -np.inf).astype(dtype)


def fuse_target(panos: PanoSet, overhead_feat_at_target: Optional[Tensor], target: GeoLocation,
                net: ga.AttentionNet, rays: RayField, inputs=None, dist_scale: float = 1.0):
    """Fused feature vector ``[C]`` for one target, plus the per-panorama weights."""
    if not any(panos.valid):
        raise ContractViolation("no valid panoramas to fuse")
    vectors, totals = [], []
    for feat, cam, ok in zip(panos.features, panos.cameras, panos.valid):
        if not ok:
            # placeholder with zero contribution; geometry of padding slots is never evaluated
            vectors.append(ops.scale(ops.sum(feat, axis=(1, 2)), 0.0))
            totals.append(Tensor(np.zeros((), dtype=feat.dtype)))
            continue
        aug = ga.build_augmented_input(feat, overhead_feat_at_target, cam, target, rays,
                                       inputs=inputs, dist_scale=dist_scale)
        red = ga.reduce(feat, ga.infer_attention(aug, net))
        vectors.append(red.vector)
        totals.append(red.total_attention)
    logits = ops.add(ops.concat([t.reshape((1,)) for t in totals], axis=0),
                     mask_logits(panos.valid, totals[0].dtype))
    w = ops.softmax(logits, axis=0)
    stacked = ops.concat([v.reshape((1, -1)) for v in vectors], axis=0)  # K x C
    fused = ops.sum(ops.mul(stacked, w.reshape((-1, 1))), axis=0)
    return fused, w


def fuse_batched(pano_feats: Tensor, valid: np.ndarray, dist: np.ndarray, orient: np.ndarray,
                 overhead_at_targets: Optional[Tensor], net: ga.AttentionNet,
                 inputs: Sequence[str], dist_scale: float = 1.0):
    """Fuse ``[B,K,C,H,W]`` panorama features for ``T`` targets per scene.

    Returns ``(fused[B,T,C], weights[B,T,K], attention[B,T,K,H,W])``.
    """
    valid = np.asarray(valid, dtype=bool)
    if not valid.any(axis=1).all():
        raise ContractViolation("a scene has no valid panoramas to fuse")
    B, K, C, H, W = pano_feats.shape
    aug = ga.batched_augmented_input(pano_feats, overhead_at_targets, dist, orient, inputs, dist_scale)
    P = net(aug)  # B, T, K, H, W
    totals = ops.sum(P, axis=(3, 4))
    logits = ops.add(totals, mask_logits(valid, totals.dtype)[:, None, :])
    w = ops.softmax(logits, axis=2)
    T = P.shape[1]
    reduced = ops.frobenius_reduce(pano_feats.reshape((B, 1, K, C, H, W)), P)  # B, T, K, C
    fused = ops.sum(ops.mul(reduced, w.reshape((B, T, K, 1))), axis=2)
    return fused, w, P


def grid_from_targets(fused: Tensor, grid: int) -> Tensor:
    """``[B, G*G, C]`` in row-major cell order -> ``[B, C, G, G]``."""
    B, T, C = fused.shape
    if T != grid * grid:
        raise ContractViolation(f"{T} targets cannot form a {grid}x{grid} grid")
    return fused.reshape((B, grid, grid, C)).transpose((0, 3, 1, 2))


def build_dense_grid(panos: PanoSet, overhead_feat: Optional[Tensor], geogrid: GeoGrid,
                     net: ga.AttentionNet, rays: RayField, inputs=None, dist_scale: float = 1.0,
                     norm=None) -> DenseGrid:
    """Apply :func:`fuse_target` at every cell of ``geogrid`` (one scene, unbatched).

    ``overhead_feat`` is ``[N, G, G]``; ``norm`` is an optional callable applied to
    the ``[1, C, G, G]`` grid (the grid batch normalisation).
    """
    G = geogrid.size
    inputs = ga.normalize_inputs(inputs)
    cells, weights = [], np.zeros((len(panos.features), G, G))
    for r in range(G):
        for c in range(G):
            ovh = None
            if overhead_feat is not None and "overhead_pool" in inputs:
                ovh = _column(overhead_feat, r, c)
            vec, w = fuse_target(panos, ovh, geogrid.location(r, c), net, rays, inputs, dist_scale)
            cells.append(vec.reshape((1, -1)))
            weights[:, r, c] = w.data
    stacked = ops.concat(cells, axis=0).reshape((1, G * G, -1))
    grid = grid_from_targets(stacked, G)
    if norm is not None:
        grid = norm(grid)
    return DenseGrid(features=grid, weights=weights)


def _column(feat: Tensor, r: int, c: int) -> Tensor:
    N, G, _ = feat.shape
    flat = feat.reshape((N, G * G))
    sel = np.zeros((G * G, 1), dtype=feat.dtype)
    sel[r * G + c, 0] = 1
    # a one-hot product keeps the gather differentiable without a dedicated indexing op
    return ops.sum(ops.mul(flat, sel.reshape(1, -1)), axis=1)
