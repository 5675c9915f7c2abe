"""In-memory scene datasets and batch assembly."""
from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import attention as ga
from .. import formats, geo, synthdata
from ..errors import ContractViolation
from .config import RunConfig
from .network import Batch


@dataclasses.dataclass
class SceneData:
    scene_id: str
    overhead: np.ndarray  # S x S x 3 uint8
    target: np.ndarray  # S x S
    panos: Optional[np.ndarray]  # K x Hp x Wp x 3 uint8, None when not loaded
    cam_lat: np.ndarray
    cam_lon: np.ndarray
    center: geo.GeoLocation
    gsd: float


def scene_from_synthetic(scene: synthdata.SyntheticScene, task: str = "classification",
                         load_panos: bool = True) -> SceneData:
    return SceneData(
        scene_id=scene.scene_id, overhead=scene.overhead,
        target=scene.labels if task == "classification" else scene.heights,
        panos=scene.panos if load_panos else None,
        cam_lat=np.array([c.lat for c in scene.cameras]), cam_lon=np.array([c.lon for c in scene.cameras]),
        center=scene.center, gsd=scene.gsd)


class SceneDataset:
    """Scenes held in memory plus cached camera/target geometry."""

    def __init__(self, scenes: Sequence[SceneData], cfg: RunConfig):
        self.scenes = list(scenes)
        self.cfg = cfg
        self._geometry: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._rays = None

    def __len__(self) -> int:
        return len(self.scenes)

    @classmethod
    def from_dir(cls, data_dir, split: str, cfg: RunConfig) -> "SceneDataset":
        """Load one split; panoramas are read only when the variant uses them."""
        root = Path(data_dir)
        scenes = []
        for rec in synthdata.read_manifest(root, split):
            panos = None
            if cfg.uses_panoramas:
                panos = np.stack([formats.read_raster(root / p) for p in rec.pano_paths])
            scenes.append(SceneData(
                scene_id=rec.scene_id, overhead=formats.read_raster(root / rec.overhead_path),
                target=formats.read_raster(root / rec.label_path), panos=panos,
                cam_lat=np.array([c.lat for c in rec.cameras]), cam_lon=np.array([c.lon for c in rec.cameras]),
                center=rec.center, gsd=rec.gsd))
        if not scenes:
            raise ContractViolation(f"split {split!r} in {root} is empty")
        return cls(scenes, cfg)

    @property
    def rays(self) -> geo.RayField:
        if self._rays is None:
            h, w = self.cfg.pano_h, self.cfg.pano_w
            for _ in range(4):
                h, w = -(-h // 2), -(-w // 2)
            self._rays = geo.pano_ray_field(h, w, self.cfg.crop_deg)
        return self._rays

    def geometry(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """``(dist[T,K], orient[T,K,3,h,w])`` between cameras and grid cells of scene ``i``."""
        s = self.scenes[i]
        if s.scene_id not in self._geometry:
            grid = geo.overhead_geogrid(s.center, self.cfg.image_px, s.gsd, self.cfg.grid)
            tl, tn = grid.flat()
            d, o = ga.geometry_maps(self.rays, s.cam_lat[None], s.cam_lon[None], tl[None], tn[None])
            self._geometry[s.scene_id] = (d[0].astype(np.float32), o[0].astype(np.float32))
        return self._geometry[s.scene_id]

    def batch(self, indices: Sequence[int]) -> Batch:
        cfg = self.cfg
        sc = [self.scenes[i] for i in indices]
        overhead = np.stack([_image(s.overhead) for s in sc])
        target = np.stack([s.target for s in sc])
        b = Batch(overhead=overhead, target=target, scene_ids=tuple(s.scene_id for s in sc))
        if cfg.uses_panoramas:
            K = cfg.num_panos
            Hp, Wp = cfg.pano_h, cfg.pano_w
            panos = np.zeros((len(sc), K, 3, Hp, Wp), dtype=np.float32)
            valid = np.zeros((len(sc), K), dtype=bool)
            geo_d, geo_o = [], []
            for j, (i, s) in enumerate(zip(indices, sc)):
                if s.panos is None:
                    raise ContractViolation(f"scene {s.scene_id}: panoramas were not loaded")
                n = min(K, len(s.panos))
                if s.panos.shape[1:3] != (Hp, Wp):
                    raise ContractViolation(f"scene {s.scene_id}: panorama {s.panos.shape[1:3]} != {(Hp, Wp)}")
                panos[j, :n] = np.stack([_image(p) for p in s.panos[:n]])
                valid[j, :n] = True
                d, o = self.geometry(i)
                # padding slots get a harmless placeholder geometry; their weight is exactly zero
                d = np.concatenate([d[:, :n], np.ones((d.shape[0], K - n), d.dtype)], axis=1)
                o = np.concatenate([o[:, :n], np.zeros((o.shape[0], K - n) + o.shape[2:], o.dtype)], axis=1)
                geo_d.append(d)
                geo_o.append(o)
            b.panos, b.valid = panos, valid
            b.dist, b.orient = np.stack(geo_d), np.stack(geo_o)
        return b


def _image(rgb: np.ndarray) -> np.ndarray:
    """uint8 ``H x W x 3`` -> float32 ``3 x H x W`` centred on zero."""
    return (rgb.astype(np.float32) / 255.0 - 0.5).transpose(2, 0, 1)
