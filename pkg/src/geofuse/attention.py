"""Geospatial attention: target-conditioned spatial attention over a panorama feature map.

The attention network sees an augmented tensor whose channels are, in this
fixed order (absent groups are dropped for ablations)::

    dist (1) | orient (3) | pano_max, pano_avg (2) | ovh_max, ovh_avg (2)

``dist`` is the camera-to-target haversine distance tiled over the map,
``orient`` the pixel rays rotated so ``[0, 1, 0]`` faces the target, and the
pooled groups are channel-wise max/mean of the panorama features and of the
overhead feature vector at the target (tiled). Two convolutions (3x3 and 5x5,
one output channel each, no nonlinearity) are concatenated and mixed by a 1x1
convolution with a sigmoid to give the attention map ``P``. A panorama
feature map reduces to one vector per target via ``k[c] = <f[c], P>_F``.
"""
from __future__ import annotations

import dataclasses
from typing import Iterable, Optional, Sequence

import numpy as np

from . import geo
from .autodiff import ops
from .autodiff.tensor import Tensor
from .errors import ContractViolation
from .geo import GeoLocation, RayField

INPUT_ORDER = ("dist", "orient", "pano_pool", "overhead_pool")
INPUT_WIDTHS = {"dist": 1, "orient": 3, "pano_pool": 2, "overhead_pool": 2}
CHANNEL_NAMES = {
    "dist": ("dist",),
    "orient": ("orient_e", "orient_n", "orient_u"),
    "pano_pool": ("pano_max", "pano_avg"),
    "overhead_pool": ("ovh_max", "ovh_avg"),
}
ALL_INPUTS = frozenset(INPUT_ORDER)


def normalize_inputs(inputs: Optional[Iterable[str]]) -> tuple[str, ...]:
    if inputs is None:
        return INPUT_ORDER
    inputs = set(inputs)
    unknown = inputs - ALL_INPUTS
    if unknown:
        raise ContractViolation(f"unknown attention inputs {sorted(unknown)}; expected a subset of {INPUT_ORDER}")
    if not inputs:
        raise ContractViolation("attention needs at least one input group")
    return tuple(k for k in INPUT_ORDER if k in inputs)


def attention_width(inputs: Optional[Iterable[str]] = None) -> int:
    return sum(INPUT_WIDTHS[k] for k in normalize_inputs(inputs))


def channel_layout(inputs: Optional[Iterable[str]] = None) -> list[str]:
    return [c for k in normalize_inputs(inputs) for c in CHANNEL_NAMES[k]]


class AttentionNet:
    """Parameters of the attention convnet, shared by every panorama and target."""

    def __init__(self, in_channels: int = 8, rng: Optional[np.random.Generator] = None,
                 init_scale: float = 0.05, dtype=np.float32):
        self.in_channels = in_channels
        rng = rng if rng is not None else np.random.default_rng(0)

        def u(*shape):
            return Tensor(rng.uniform(-init_scale, init_scale, shape).astype(dtype), requires_grad=True)

        self.conv3_w = u(1, in_channels, 3, 3)
        self.conv5_w = u(1, in_channels, 5, 5)
        self.conv1_w = u(1, 2, 1, 1)
        self.conv3_b = Tensor(np.zeros(1, dtype), requires_grad=True)
        self.conv5_b = Tensor(np.zeros(1, dtype), requires_grad=True)
        self.conv1_b = Tensor(np.zeros(1, dtype), requires_grad=True)

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        names = ("conv3_w", "conv3_b", "conv5_w", "conv5_b", "conv1_w", "conv1_b")
        return {prefix + n: getattr(self, n) for n in names}

    def zero_(self) -> None:
        for p in self.parameters().values():
            p.data[...] = 0

    def __call__(self, aug: Tensor) -> Tensor:
        """``aug[..., Cin, H, W]`` -> attention ``[..., H, W]`` in (0, 1)."""
        if aug.shape[-3] != self.in_channels:
            raise ContractViolation(
                f"attention net expects {self.in_channels} input channels, got {aug.shape[-3]}")
        lead = aug.shape[:-3]
        H, W = aug.shape[-2:]
        x = aug.reshape((-1, self.in_channels, H, W))
        a = ops.conv2d(x, self.conv3_w, self.conv3_b)
        b = ops.conv2d(x, self.conv5_w, self.conv5_b)
        p = ops.sigmoid(ops.conv2d(ops.concat([a, b], axis=1), self.conv1_w, self.conv1_b))
        return p.reshape(lead + (H, W))


@dataclasses.dataclass
class AttentionMap:
    values: Tensor  # H x W
    total: Tensor  # scalar

    def numpy(self) -> np.ndarray:
        return self.values.data


@dataclasses.dataclass
class ReducedFeature:
    vector: Tensor  # C
    total_attention: Tensor


# ----------------------------------------------------------------------------
# single (panorama, target) pair

def build_augmented_input(pano_feat: Tensor, overhead_feat_at_target: Tensor, camera: GeoLocation,
                          target: GeoLocation, rays: RayField,
                          inputs: Optional[Iterable[str]] = None, dist_scale: float = 1.0) -> Tensor:
    """Augmented attention input ``[n, H, W]`` for one panorama and one target."""
    inputs = normalize_inputs(inputs)
    C, H, W = pano_feat.shape
    if rays.shape != (H, W):
        raise ContractViolation(f"ray field {rays.shape} does not match feature map {(H, W)}")
    parts = []
    if "dist" in inputs or "orient" in inputs:
        dist, orient = geo.distance_orientation_maps(rays, camera, target)
        dt = pano_feat.dtype
        if "dist" in inputs:
            parts.append(Tensor((dist.transpose(2, 0, 1) * dist_scale).astype(dt)))
        if "orient" in inputs:
            parts.append(Tensor(orient.transpose(2, 0, 1).astype(dt)))
    if "pano_pool" in inputs:
        parts.append(ops.channel_pool(pano_feat, "max", axis=0))
        parts.append(ops.channel_pool(pano_feat, "avg", axis=0))
    if "overhead_pool" in inputs:
        N = overhead_feat_at_target.shape[0]
        tiled = ops.broadcast_to(overhead_feat_at_target.reshape((N, 1, 1)), (N, H, W))
        parts.append(ops.channel_pool(tiled, "max", axis=0))
        parts.append(ops.channel_pool(tiled, "avg", axis=0))
    return ops.concat(parts, axis=0)


def infer_attention(aug: Tensor, net: AttentionNet) -> AttentionMap:
    p = net(aug.reshape((1,) + aug.shape))
    H, W = aug.shape[-2:]
    values = p.reshape((H, W))
    return AttentionMap(values=values, total=ops.sum(values))


def reduce(pano_feat: Tensor, attn: AttentionMap) -> ReducedFeature:
    return ReducedFeature(vector=ops.frobenius_reduce(pano_feat, attn.values), total_attention=attn.total)


# ----------------------------------------------------------------------------
# batched path: B scenes x T targets x K panoramas

def geometry_maps(rays: RayField, cam_lat, cam_lon, tgt_lat, tgt_lon):
    """Distance ``[B,T,K]`` and rotated rays ``[B,T,K,3,H,W]``.

    ``cam_*`` are ``[B,K]`` arrays and ``tgt_*`` are ``[B,T]``.
    """
    cl, cn = np.asarray(cam_lat)[:, None, :], np.asarray(cam_lon)[:, None, :]
    tl, tn = np.asarray(tgt_lat)[:, :, None], np.asarray(tgt_lon)[:, :, None]
    dist = geo.haversine_m(cl, cn, tl, tn)
    if (dist < 1e-6).any():
        raise ContractViolation("undefined bearing: a camera coincides with a target cell")
    bear = geo.bearing_deg(cl, cn, tl, tn)
    orient = geo.rotate_about_zenith(rays.rays, bear[..., None, None])
    return dist, np.moveaxis(orient, -1, -3)


def batched_augmented_input(pano_feats: Tensor, overhead_at_targets: Optional[Tensor],
                            dist: np.ndarray, orient: np.ndarray,
                            inputs: Sequence[str], dist_scale: float = 1.0) -> Tensor:
    """``[B,T,K,n,H,W]`` from features ``[B,K,C,H,W]``, overhead ``[B,T,N]`` and geometry."""
    B, K, C, H, W = pano_feats.shape
    T = dist.shape[1]
    dt = pano_feats.dtype
    full = (B, T, K, 1, H, W)
    parts = []
    if "dist" in inputs:
        d = (dist * dist_scale).astype(dt)[..., None, None, None]
        parts.append(Tensor(np.broadcast_to(d, full)))
    if "orient" in inputs:
        parts.append(Tensor(orient.astype(dt)))
    if "pano_pool" in inputs:
        for mode in ("max", "avg"):
            pooled = ops.channel_pool(pano_feats, mode, axis=2).reshape((B, 1, K, 1, H, W))
            parts.append(ops.broadcast_to(pooled, full))
    if "overhead_pool" in inputs:
        if overhead_at_targets is None:
            raise ContractViolation("overhead_pool input requested without overhead features")
        for mode in ("max", "avg"):
            pooled = ops.channel_pool(overhead_at_targets, mode, axis=2).reshape((B, T, 1, 1, 1, 1))
            parts.append(ops.broadcast_to(pooled, full))
    return ops.concat(parts, axis=3)
