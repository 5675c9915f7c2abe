"""Near/remote segmentation network.

Data flow for the full variant::

    overhead --enc--> feat_hi (S/4), feat_lo (S/8)
    panoramas --enc--> [K, C, h, w] --geospatial attention--> grid [C, G, G]  (G = S/8)
    concat(feat_lo, grid) --block1--> d1 (S/16) --block2--> d2 (S/32)
    decoder(d2, d1, feat_lo, feat_hi) --> head --> [out, S, S]

The decoder concatenates each skip map with the running activation at the
skip's resolution, then upsamples and applies a double conv. ``remote`` runs
the same pipeline on ``feat_lo`` alone and never touches panoramas;
``proximate`` fuses the grid alone and drops both overhead skips.
"""
from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .. import attention as ga
from .. import fusion, geo
from ..autodiff import ops
from ..autodiff.tensor import Tensor
from ..errors import ContractViolation
from .config import RunConfig
from .layers import (BatchNorm2d, Conv2d, ConvBNReLU, LayerNorm, Module, Sequential, conv_out,
                     layer_rng)


@dataclasses.dataclass
class Batch:
    overhead: np.ndarray  # B x 3 x S x S float32
    target: np.ndarray  # B x S x S (uint8 labels or float32 heights)
    panos: Optional[np.ndarray] = None  # B x K x 3 x Hp x Wp float32
    valid: Optional[np.ndarray] = None  # B x K bool
    dist: Optional[np.ndarray] = None  # B x T x K meters
    orient: Optional[np.ndarray] = None  # B x T x K x 3 x h x w
    scene_ids: tuple = ()

    @property
    def size(self) -> int:
        return self.overhead.shape[0]


class OverheadEncoder(Module):
    """Three stride-2 conv stages; returns the stride-4 and stride-8 maps."""

    def __init__(self, widths, seed: int):
        w1, w2, w3 = widths
        self.stage1 = ConvBNReLU("ovh.stage1", 3, w1, 3, 2, seed)
        self.stage2 = ConvBNReLU("ovh.stage2", w1, w2, 3, 2, seed)
        self.stage3 = ConvBNReLU("ovh.stage3", w2, w3, 3, 2, seed)

    def __call__(self, image: Tensor):
        h = self.stage2(self.stage1(image))
        return h, self.stage3(h)


class PanoEncoder(Module):
    """Four stride-2 conv stages, then 1x1 conv to ``C`` channels, layer norm and ReLU."""

    def __init__(self, widths, channels: int, in_hw: tuple[int, int], seed: int):
        cin, stages = 3, []
        for i, w in enumerate(widths):
            stages.append(ConvBNReLU(f"pano.stage{i + 1}", cin, w, 3, 2, seed))
            cin = w
        self.stages = Sequential(stages)
        self.proj = Conv2d("pano.proj", cin, channels, 1, 1, bias=True, seed=seed)
        h, w = in_hw
        for _ in widths:
            h, w = conv_out(h), conv_out(w)
        self.out_hw = (h, w)
        self.norm = LayerNorm("pano.norm", (channels, h, w))

    def __call__(self, images: Tensor) -> Tensor:
        return ops.relu(self.norm(self.proj(self.stages(images))))


class FusionBlock(Module):
    """Three conv+norm+relu layers followed by 2x2 max pooling."""

    def __init__(self, name: str, cin: int, cout: int, seed: int):
        self.convs = Sequential([ConvBNReLU(f"{name}.{i}", cin if i == 0 else cout, cout, 3, 1, seed)
                                 for i in range(3)])
        self.cin, self.cout = cin, cout

    def __call__(self, x: Tensor):
        full = self.convs(x)
        return ops.maxpool2(full)


class DoubleConv(Module):
    def __init__(self, name: str, cin: int, cout: int, seed: int):
        self.a = ConvBNReLU(f"{name}.a", cin, cout, 3, 1, seed)
        self.b = ConvBNReLU(f"{name}.b", cout, cout, 3, 1, seed)
        self.cin = cin

    def __call__(self, x):
        return self.b(self.a(x))


class Decoder(Module):
    """Five upsampling levels; expects four maps ``(d2, d1, skip_lo, skip_hi)``."""

    N_INPUTS = 4

    def __init__(self, in_widths: tuple[int, int, int, int], widths, out_channels: int, seed: int):
        c_d2, c_d1, c_lo, c_hi = in_widths
        skips = (0, c_d1, c_lo, c_hi, 0)  # skip concatenated before level i
        levels, cin = [], c_d2
        for i, w in enumerate(widths):
            cin += skips[i]
            levels.append(DoubleConv(f"dec.level{i}", cin, w, seed))
            cin = w
        self.levels = Sequential(levels)
        self.skip_widths = skips
        self.head = Conv2d("dec.head", cin, out_channels, 1, 1, bias=True, seed=seed)

    def __call__(self, inputs) -> Tensor:
        if len(inputs) != self.N_INPUTS:
            raise ContractViolation(f"decoder expects {self.N_INPUTS} input maps, got {len(inputs)}")
        d2, d1, lo, hi = inputs
        skips = (None, d1, lo, hi, None)
        x = d2
        for i, level in enumerate(self.levels.layers):
            s = skips[i]
            if s is not None:
                if s.shape[2:] != x.shape[2:]:
                    raise ContractViolation(
                        f"decoder level {i}: skip {s.shape[2:]} does not match activation {x.shape[2:]}")
                x = ops.concat([x, s], axis=1)
            if x.shape[1] != level.cin:
                raise ContractViolation(
                    f"decoder level {i}: {x.shape[1]} channels, configured for {level.cin}")
            x = level(ops.upsample_nearest2(x))
        return self.head(x)


class NearRemoteNet(Module):
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        seed = cfg.seed
        self.variant = cfg.variant
        self.inputs = cfg.inputs
        ow = cfg.overhead_widths
        f1, f2 = cfg.fusion_widths
        C = cfg.pano_channels
        self.overhead_enc = OverheadEncoder(ow, seed)
        if cfg.uses_panoramas:
            self.pano_enc = PanoEncoder(cfg.pano_widths, C, (cfg.pano_h, cfg.pano_w), seed)
            self.attention = ga.AttentionNet(cfg.attention_width, rng=layer_rng(seed, "attention"),
                                             init_scale=cfg.attention_init_scale)
            self.grid_bn = BatchNorm2d("grid_bn", C)
            self.rays = geo.pano_ray_field(*self.pano_enc.out_hw, crop_deg=cfg.crop_deg)
        else:
            self.pano_enc = self.attention = self.grid_bn = self.rays = None
        ovh_in = ow[2] if cfg.variant != "proximate" else 0
        grid_in = C if cfg.uses_panoramas else 0
        self.fusion_in = ovh_in + grid_in
        self.block1 = FusionBlock("block1", self.fusion_in, f1, seed)
        self.block2 = FusionBlock("block2", f1, f2, seed)
        skip_lo = ow[2] if cfg.variant != "proximate" else 0
        skip_hi = ow[1] if cfg.variant != "proximate" else 0
        self.decoder = Decoder((f2, f1, skip_lo, skip_hi), cfg.decoder_widths, cfg.out_channels, seed)
        self._check_widths()

    def _check_widths(self) -> None:
        if self.attention is not None and self.attention.in_channels != ga.attention_width(self.inputs):
            raise ContractViolation("attention: input width does not match the ablation set")
        expected = (self.cfg.overhead_widths[2] if self.variant != "proximate" else 0) + \
            (self.cfg.pano_channels if self.cfg.uses_panoramas else 0)
        if self.block1.cin != expected:
            raise ContractViolation(f"block1: {self.block1.cin} input channels, expected {expected}")

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = super().parameters(prefix)
        if self.attention is not None:
            out.update(self.attention.parameters(prefix + "attention."))
        return out

    # ------------------------------------------------------------------
    def encode_panoramas(self, panos: np.ndarray) -> Tensor:
        B, K = panos.shape[:2]
        feats = self.pano_enc(Tensor(panos.reshape((B * K,) + panos.shape[2:])))
        return feats.reshape((B, K) + feats.shape[1:])

    def dense_grid(self, batch: Batch, feat_lo: Optional[Tensor], record: Optional[dict] = None) -> Tensor:
        G = self.cfg.grid
        pf = self.encode_panoramas(batch.panos)
        B, K = pf.shape[:2]
        ovh_t = None
        if "overhead_pool" in self.inputs:
            N = feat_lo.shape[1]
            ovh_t = feat_lo.reshape((B, N, G * G)).transpose((0, 2, 1))
        valid = batch.valid if batch.valid is not None else np.ones((B, K), dtype=bool)
        fused, w, P = fusion.fuse_batched(pf, valid, batch.dist, batch.orient, ovh_t, self.attention,
                                          self.inputs, self.cfg.dist_scale)
        grid = self.grid_bn(fusion.grid_from_targets(fused, G))
        if record is not None:
            record.update(pano_features=pf, weights=w, attention=P, grid=grid)
        return grid

    def __call__(self, batch: Batch, record: Optional[dict] = None) -> Tensor:
        cfg = self.cfg
        S = cfg.image_px
        if batch.overhead.shape[1:] != (3, S, S):
            raise ContractViolation(f"overhead batch {batch.overhead.shape[1:]} != (3, {S}, {S})")
        feat_hi, feat_lo = self.overhead_enc(Tensor(batch.overhead))
        if feat_lo.shape[2] != cfg.grid:
            raise ContractViolation(f"overhead encoder: stride-8 map {feat_lo.shape[2:]} does not match grid {cfg.grid}")
        parts = []
        if self.variant != "proximate":
            parts.append(feat_lo)
        if cfg.uses_panoramas:
            if batch.panos is None:
                raise ContractViolation(f"variant {self.variant!r} needs panoramas")
            parts.append(self.dense_grid(batch, feat_lo, record))
        x = parts[0] if len(parts) == 1 else ops.concat(parts, axis=1)
        if x.shape[1] != self.block1.cin:
            raise ContractViolation(f"block1: {x.shape[1]} input channels, configured for {self.block1.cin}")
        d1 = self.block1(x)
        d2 = self.block2(d1)
        if self.variant == "proximate":
            dec_in = (d2, d1, None, None)
        else:
            dec_in = (d2, d1, feat_lo, feat_hi)
        out = self.decoder(dec_in)
        if record is not None:
            record.update(feat_hi=feat_hi, feat_lo=feat_lo, fusion_in=x, d1=d1, d2=d2,
                          decoder_inputs=dec_in, output=out)
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"param.{k}": v.data for k, v in self.parameters().items()}
        out.update({f"buffer.{k}": v for k, v in self.buffers().items()})
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        for k, p in self.parameters().items():
            key = f"param.{k}"
            if key not in arrays:
                raise ContractViolation(f"checkpoint lacks parameter {k!r}")
            if arrays[key].shape != p.shape:
                raise ContractViolation(f"parameter {k!r}: checkpoint shape {arrays[key].shape} != {p.shape}")
            p.data[...] = arrays[key]
        self.load_buffers({k[len("buffer."):]: v for k, v in arrays.items() if k.startswith("buffer.")})


def encode_overhead(net: NearRemoteNet, image: np.ndarray, center: geo.GeoLocation, gsd: float):
    """``(feat_hi, feat_lo, geogrid)`` for one ``[3, S, S]`` image."""
    S = image.shape[-1]
    if S % 8 or S % net.cfg.grid:
        raise ContractViolation(f"image size {S} must be divisible by 8 and by the grid {net.cfg.grid}")
    hi, lo = net.overhead_enc(Tensor(image[None].astype(np.float32)))
    return hi, lo, geo.overhead_geogrid(center, S, gsd, net.cfg.grid)


def encode_pano(net: NearRemoteNet, image: np.ndarray) -> Tensor:
    if net.pano_enc is None:
        raise ContractViolation("remote variant has no panorama encoder")
    return net.pano_enc(Tensor(image[None].astype(np.float32)))
