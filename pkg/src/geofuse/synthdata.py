"""Procedural city scenes for near/remote segmentation experiments.

The world is a regular grid of city blocks separated by streets. Most blocks
hold one box-shaped building; the rest are parks. Every building carries a
facade class that is painted on its walls only: the overhead rendering shows
every roof in the same gray, so the facade class (and with it the label of
building pixels) can only be recovered from street-level panoramas.

Labels: 0 = open ground (street or park), ``1 + facade`` = building,
:data:`IGNORE_LABEL` on a border band. A height raster (building height,
0 on the ground, -1 on the band) backs the regression task.

All world geometry is kept in integer centimeters so a scene is a pure
function of its seed.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import math
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import formats, geo
from .errors import ContractViolation
from .geo import GeoLocation

IGNORE_LABEL = 255
ANCHOR = GeoLocation(40.7, -73.95)

FACADE_COLORS = np.array([
    [0.85, 0.18, 0.15],  # red
    [0.15, 0.30, 0.85],  # blue
    [0.92, 0.80, 0.15],  # yellow
    [0.70, 0.20, 0.75],  # purple
    [0.95, 0.55, 0.10],  # orange
    [0.10, 0.70, 0.70],  # teal
])
STREET_RGB = np.array([0.30, 0.30, 0.32])
PARK_RGB = np.array([0.25, 0.45, 0.20])
SKY_RGB = np.array([0.60, 0.75, 0.92])


@dataclasses.dataclass(frozen=True)
class SceneConfig:
    image_px: int = 64
    gsd: float = 1.0
    pano_h: int = 64
    pano_w: int = 256
    crop_deg: float = geo.DEFAULT_CROP_DEG
    num_panos: int = 4
    num_facades: int = 4
    grid: int = 8
    block_pitch_m: float = 26.0
    street_m: float = 8.0
    park_prob: float = 0.15
    camera_height_m: float = 2.5
    border_px: int = 2

    @property
    def tile_m(self) -> float:
        return self.image_px * self.gsd

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class World:
    """Buildings as integer-cm boxes ``[x0, y0, x1, y1]`` (x east, y north)."""
    boxes_cm: np.ndarray
    heights_cm: np.ndarray
    facades: np.ndarray
    roof_levels: np.ndarray  # per-building roof shade offset, independent of facade
    phase_cm: tuple[int, int]
    pitch_cm: int
    street_cm: int
    seed: int

    @property
    def boxes_m(self) -> np.ndarray:
        return self.boxes_cm.astype(np.float64) / 100.0

    def with_facade(self, index: int, facade: int) -> "World":
        f = self.facades.copy()
        f[index] = facade
        return dataclasses.replace(self, facades=f)

    def in_block(self, x_m, y_m) -> np.ndarray:
        """True where a point lies inside a city block (not on a street)."""
        p = self.pitch_cm / 100.0
        half = self.street_cm / 200.0
        u = np.mod(np.asarray(x_m) - self.phase_cm[0] / 100.0, p)
        v = np.mod(np.asarray(y_m) - self.phase_cm[1] / 100.0, p)
        return (u >= half) & (u < p - half) & (v >= half) & (v < p - half)

    def building_at(self, x_m, y_m) -> np.ndarray:
        """Index of the building covering each point, -1 for open ground."""
        x = np.asarray(x_m, dtype=np.float64)[..., None]
        y = np.asarray(y_m, dtype=np.float64)[..., None]
        b = self.boxes_m
        inside = (x >= b[:, 0]) & (x < b[:, 2]) & (y >= b[:, 1]) & (y < b[:, 3])
        idx = np.where(inside.any(axis=-1), inside.argmax(axis=-1), -1)
        return idx


@dataclasses.dataclass
class SyntheticScene:
    scene_id: str
    seed: int
    overhead: np.ndarray  # S x S x 3 uint8
    labels: np.ndarray  # S x S uint8
    heights: np.ndarray  # S x S float32
    panos: np.ndarray  # K x Hp x Wp x 3 uint8
    cameras: list[GeoLocation]
    cameras_m: np.ndarray  # K x 2 (east, north) relative to center
    center: GeoLocation
    gsd: float
    world: World


# ----------------------------------------------------------------------------
# world

def _scene_center(rng: np.random.Generator) -> GeoLocation:
    east, north = rng.integers(-500_000, 500_000, size=2) / 100.0
    lat, lon = geo.offset_location(ANCHOR, east, north)
    return GeoLocation(float(lat), float(lon))


def generate_world(seed: int, cfg: SceneConfig = SceneConfig()) -> World:
    """City blocks around the tile; deterministic in ``seed``."""
    rng = np.random.default_rng([seed, 0])
    pitch = int(round(cfg.block_pitch_m * 100))
    street = int(round(cfg.street_m * 100))
    phase = (int(rng.integers(0, pitch)), int(rng.integers(0, pitch)))
    reach = int(cfg.tile_m * 100 / 2) + 3 * pitch
    n = reach // pitch + 2
    boxes, heights, facades, roofs = [], [], [], []
    for i in range(-n, n + 1):
        for j in range(-n, n + 1):
            bx0 = phase[0] + i * pitch + street // 2
            by0 = phase[1] + j * pitch + street // 2
            bx1, by1 = bx0 + pitch - street, by0 + pitch - street
            if bx1 < -reach or bx0 > reach or by1 < -reach or by0 > reach:
                continue
            if rng.uniform() < cfg.park_prob:
                continue
            inset = rng.integers(0, 200, size=4)  # up to 2 m setback per side
            boxes.append([bx0 + inset[0], by0 + inset[1], bx1 - inset[2], by1 - inset[3]])
            heights.append(int(rng.integers(600, 1800)))
            facades.append(int(rng.integers(0, cfg.num_facades)))
            roofs.append(int(rng.integers(-12, 13)))
    return World(
        boxes_cm=np.array(boxes, dtype=np.int64).reshape(-1, 4),
        heights_cm=np.array(heights, dtype=np.int64),
        facades=np.array(facades, dtype=np.int64),
        roof_levels=np.array(roofs, dtype=np.int64),
        phase_cm=phase, pitch_cm=pitch, street_cm=street, seed=seed)


def label_function(building_idx: np.ndarray, world: World) -> np.ndarray:
    """0 on open ground, ``1 + facade`` on buildings."""
    return np.where(building_idx >= 0, 1 + world.facades[np.maximum(building_idx, 0)], 0)


def _pixel_centers_m(cfg: SceneConfig):
    S = cfg.image_px
    k = (np.arange(S) + 0.5 - S / 2) * cfg.gsd
    x = np.broadcast_to(k[None, :], (S, S))
    y = np.broadcast_to(-k[:, None], (S, S))
    return x, y


def render_overhead(world: World, cfg: SceneConfig = SceneConfig()):
    """Top-down rendering ``(rgb uint8, labels uint8, heights float32)``.

    Roofs are gray with a per-building shade drawn independently of the
    facade class, so no overhead pixel carries facade information.
    """
    x, y = _pixel_centers_m(cfg)
    bidx = world.building_at(x, y)
    ground = np.where(world.in_block(x, y)[..., None], PARK_RGB, STREET_RGB)
    roof = (0.62 + world.roof_levels[np.maximum(bidx, 0)] / 255.0)[..., None] * np.ones(3)
    rgb = np.where((bidx >= 0)[..., None], roof, ground)
    noise = np.random.default_rng([world.seed, 1]).normal(0.0, 0.02, rgb.shape)
    image = formats.to_uint8(rgb + noise)

    labels = label_function(bidx, world).astype(np.uint8)
    heights = np.where(bidx >= 0, world.heights_cm[np.maximum(bidx, 0)] / 100.0, 0.0).astype(np.float32)
    b = cfg.border_px
    if b:
        band = np.ones(labels.shape, dtype=bool)
        band[b:-b, b:-b] = False
        labels[band] = IGNORE_LABEL
        heights[band] = -1.0
    return image, labels, heights


# ----------------------------------------------------------------------------
# panoramas

def _first_hits(world: World, cam_xy: np.ndarray, dirs: np.ndarray):
    """Nearest building hit along horizontal rays.

    Returns ``(t, building_idx, hit_x_face)`` per ray; ``t`` is ``inf`` on a miss.
    """
    b = world.boxes_m
    if len(b) == 0:
        n = len(dirs)
        return np.full(n, np.inf), np.full(n, -1), np.zeros(n, dtype=bool)
    dx, dy = dirs[:, 0:1], dirs[:, 1:2]
    with np.errstate(divide="ignore", invalid="ignore"):
        tx1 = (b[None, :, 0] - cam_xy[0]) / dx
        tx2 = (b[None, :, 2] - cam_xy[0]) / dx
        ty1 = (b[None, :, 1] - cam_xy[1]) / dy
        ty2 = (b[None, :, 3] - cam_xy[1]) / dy
    # rays parallel to a slab: inside the slab -> unconstrained, outside -> miss
    par_x = dx == 0
    in_x = (cam_xy[0] >= b[None, :, 0]) & (cam_xy[0] <= b[None, :, 2])
    txn = np.where(par_x, np.where(in_x, -np.inf, np.inf), np.minimum(tx1, tx2))
    txf = np.where(par_x, np.where(in_x, np.inf, -np.inf), np.maximum(tx1, tx2))
    par_y = dy == 0
    in_y = (cam_xy[1] >= b[None, :, 1]) & (cam_xy[1] <= b[None, :, 3])
    tyn = np.where(par_y, np.where(in_y, -np.inf, np.inf), np.minimum(ty1, ty2))
    tyf = np.where(par_y, np.where(in_y, np.inf, -np.inf), np.maximum(ty1, ty2))
    t_near = np.maximum(txn, tyn)
    t_far = np.minimum(txf, tyf)
    hit = (t_near <= t_far) & (t_near > 0)
    t = np.where(hit, t_near, np.inf)
    idx = t.argmin(axis=1)
    best = t[np.arange(len(dirs)), idx]
    x_face = (txn >= tyn)[np.arange(len(dirs)), idx]
    idx = np.where(np.isfinite(best), idx, -1)
    return best, idx, x_face


def render_panorama(world: World, cam_xy, cfg: SceneConfig = SceneConfig(),
                    noise_seed: Optional[int] = None) -> np.ndarray:
    """Equirectangular street-level view from ``cam_xy`` (meters east/north of the tile center).

    Pixel directions come from :func:`geo.pano_ray_field`, so the center
    column looks north.
    """
    cam = np.asarray(cam_xy, dtype=np.float64)
    elev, azim = geo.pano_angles(cfg.pano_h, cfg.pano_w, cfg.crop_deg)
    az = np.radians(azim)
    dirs = np.stack([np.sin(az), np.cos(az)], axis=1)
    t_hit, bidx, x_face = _first_hits(world, cam, dirs)
    h_cam = cfg.camera_height_m

    tan_el = np.tan(np.radians(elev))[:, None]  # Hp x 1
    heights = np.where(bidx >= 0, world.heights_cm[np.maximum(bidx, 0)] / 100.0, 0.0)[None, :]
    t_wall = np.where(np.isfinite(t_hit), t_hit, 0.0)[None, :]
    z_at_wall = h_cam + tan_el * t_wall  # height where each pixel ray meets the wall
    with np.errstate(divide="ignore"):
        t_ground = np.where(tan_el < 0, h_cam / -tan_el, np.inf)  # Hp x 1
    facade_px = (bidx[None, :] >= 0) & (z_at_wall <= heights) & (t_ground >= t_hit[None, :])
    ground_px = ~facade_px & (tan_el < 0)

    t_g = np.where(np.isfinite(t_ground), t_ground, 0.0)
    gx = cam[0] + t_g * dirs[None, :, 0]
    gy = cam[1] + t_g * dirs[None, :, 1]
    ground_rgb = np.where(world.in_block(np.where(ground_px, gx, 0), np.where(ground_px, gy, 0))[..., None],
                          PARK_RGB, STREET_RGB)
    sky_rgb = SKY_RGB * (0.9 + 0.1 * (1 - np.clip(tan_el, 0, 1)))[..., None] * np.ones((1, cfg.pano_w, 1))

    fac = FACADE_COLORS[world.facades[np.maximum(bidx, 0)]][None, :, :]
    shade = np.where(x_face, 0.85, 1.0)[None, :, None]
    floor = np.mod(np.where(facade_px, z_at_wall, 0.0), 3.0)
    window = ((floor > 1.2) & (floor < 2.2))[..., None]
    wall_rgb = fac * shade * np.where(window, 0.7, 1.0)

    rgb = np.where(facade_px[..., None], wall_rgb, np.where(ground_px[..., None], ground_rgb, sky_rgb))
    seed = world.seed if noise_seed is None else noise_seed
    # noise is keyed on the camera position so co-located cameras render identically
    key = [seed, 2] + [int(round(v * 100)) + 2**31 for v in cam]
    noise = np.random.default_rng(key).normal(0.0, 0.02, rgb.shape)
    return formats.to_uint8(rgb + noise)


def trace_pixel(world: World, cam_xy, elev_deg: float, azim_deg: float,
                camera_height_m: float = 2.5) -> tuple[str, int]:
    """Scalar reference ray cast: ``("facade", building) | ("ground", -1) | ("sky", -1)``.

    Marches building by building with plain slab tests; used as an
    independent check on :func:`render_panorama`.
    """
    az, el = math.radians(azim_deg), math.radians(elev_deg)
    dx, dy = math.sin(az), math.cos(az)
    best, best_i = math.inf, -1
    for i, (x0, y0, x1, y1) in enumerate(world.boxes_m):
        lo, hi = -math.inf, math.inf
        for c, d, a, b in ((cam_xy[0], dx, x0, x1), (cam_xy[1], dy, y0, y1)):
            if abs(d) < 1e-15:
                if not a <= c <= b:
                    lo, hi = math.inf, -math.inf
                continue
            t1, t2 = (a - c) / d, (b - c) / d
            lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
        if lo <= hi and 0 < lo < best:
            best, best_i = lo, i
    t_ground = camera_height_m / -math.tan(el) if el < 0 else math.inf
    if best_i >= 0 and t_ground >= best:
        z = camera_height_m + math.tan(el) * best
        if z <= world.heights_cm[best_i] / 100.0:
            return "facade", best_i
    if el < 0:
        return "ground", -1
    return "sky", -1


# ----------------------------------------------------------------------------
# scenes

def _place_cameras(world: World, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    half = cfg.tile_m / 2 - 2.0
    ex, ny, _ = geo.cell_offsets_m(cfg.image_px, cfg.gsd, cfg.grid)
    cells = np.stack([np.asarray(ex).ravel(), np.asarray(ny).ravel()], axis=1)
    cams = []
    for k in range(cfg.num_panos):
        quadrant = k % 4
        sx = -1 if quadrant in (0, 3) else 1
        sy = 1 if quadrant in (0, 1) else -1
        for attempt in range(10_000):
            if attempt < 5_000:
                p = np.array([sx * rng.integers(0, int(half * 100)), sy * rng.integers(0, int(half * 100))]) / 100.0
            else:
                p = rng.integers(-int(half * 100), int(half * 100), size=2) / 100.0
            if world.in_block(p[0], p[1]) or world.building_at(p[0], p[1]) >= 0:
                continue
            if np.min(np.hypot(*(cells - p).T)) < 0.5:
                continue
            if any(np.allclose(p, c) for c in cams):
                continue
            cams.append(p)
            break
        else:  # pragma: no cover - streets always exist inside the tile
            raise RuntimeError("could not place a camera on a street")
    return np.array(cams)


def scene_seed(dataset_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([dataset_seed, index]).generate_state(1)[0])


def make_scene(seed: int, cfg: SceneConfig = SceneConfig(), scene_id: Optional[str] = None) -> SyntheticScene:
    """Generate world, overhead rendering, labels and panoramas for one scene.

    Worlds whose labelled area shows fewer than two classes are regenerated
    from a derived seed.
    """
    for attempt in range(100):
        world_seed = seed if attempt == 0 else scene_seed(seed, 1_000_000 + attempt)
        world = generate_world(world_seed, cfg)
        overhead, labels, heights = render_overhead(world, cfg)
        present = np.unique(labels[labels != IGNORE_LABEL])
        if len(present) >= 2:
            break
    else:  # pragma: no cover
        raise RuntimeError(f"scene seed {seed}: no world with two classes")
    rng = np.random.default_rng([world_seed, 3])
    center = _scene_center(rng)
    cams_m = _place_cameras(world, cfg, rng)
    panos = np.stack([render_panorama(world, c, cfg) for c in cams_m])
    lat, lon = geo.offset_location(center, cams_m[:, 0], cams_m[:, 1])
    cameras = [GeoLocation(float(a), float(b)) for a, b in zip(lat, lon)]
    return SyntheticScene(
        scene_id=scene_id or str(seed), seed=seed, overhead=overhead, labels=labels, heights=heights,
        panos=panos, cameras=cameras, cameras_m=cams_m, center=center, gsd=cfg.gsd, world=world)


# ----------------------------------------------------------------------------
# datasets on disk

SPLITS = ("train", "val", "test")


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ContractViolation(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    return n_train, n_val, n - n_train - n_val


def split_indices(n_scenes: int, seed: int, ratios=(0.7, 0.15, 0.15)) -> dict[str, list[int]]:
    if n_scenes < 3:
        raise ContractViolation(f"need at least 3 scenes for three splits, got {n_scenes}")
    a, b, _ = split_counts(n_scenes, ratios)
    order = np.random.default_rng([seed, 7]).permutation(n_scenes)
    return {"train": sorted(order[:a].tolist()), "val": sorted(order[a:a + b].tolist()),
            "test": sorted(order[a + b:].tolist())}


def scene_name(dataset_seed: int, index: int) -> str:
    return f"s{dataset_seed}-{index:05d}"


def parse_scene_name(name: str) -> tuple[int, int]:
    seed, index = name[1:].rsplit("-", 1)
    return int(seed), int(index)


@dataclasses.dataclass
class ManifestRecord:
    scene_id: str
    overhead_path: str
    label_path: str
    pano_paths: list[str]
    cameras: list[GeoLocation]
    center: GeoLocation
    gsd: float

    def to_line(self) -> str:
        fields = [self.scene_id, self.overhead_path, self.label_path, str(len(self.pano_paths))]
        fields += self.pano_paths
        fields += [f"{c.lat:.12f},{c.lon:.12f}" for c in self.cameras]
        fields += [f"{self.center.lat:.12f},{self.center.lon:.12f}", repr(float(self.gsd))]
        return "\t".join(fields)

    @classmethod
    def from_line(cls, line: str) -> "ManifestRecord":
        f = line.rstrip("\n").split("\t")
        try:
            k = int(f[3])
            panos = f[4:4 + k]
            cams = [GeoLocation(*map(float, s.split(","))) for s in f[4 + k:4 + 2 * k]]
            center = GeoLocation(*map(float, f[4 + 2 * k].split(",")))
            gsd = float(f[5 + 2 * k])
        except (IndexError, ValueError) as exc:
            raise ContractViolation(f"malformed manifest line: {line[:80]!r}") from exc
        if len(f) != 6 + 2 * k:
            raise ContractViolation(f"manifest line has {len(f)} fields, expected {6 + 2 * k}")
        return cls(f[0], f[1], f[2], panos, cams, center, gsd)


def _scene_files(scene_id: str, k: int, task: str) -> tuple[str, str, list[str]]:
    base = f"scenes/{scene_id}"
    label = f"{base}/label.gfl" if task == "classification" else f"{base}/height.gfh"
    return f"{base}/overhead.gfr", label, [f"{base}/pano_{i}.gfr" for i in range(k)]


def _write_scene(args) -> str:
    out, dataset_seed, index, cfg_dict, task = args
    cfg = SceneConfig(**cfg_dict)
    name = scene_name(dataset_seed, index)
    scene = make_scene(scene_seed(dataset_seed, index), cfg, scene_id=name)
    ovh, _, pano_paths = _scene_files(name, cfg.num_panos, task)
    root = Path(out)
    (root / "scenes" / name).mkdir(parents=True, exist_ok=True)
    formats.write_raster(root / ovh, scene.overhead, formats.RGB_MAGIC)
    formats.write_raster(root / f"scenes/{name}/label.gfl", scene.labels, formats.LABEL_MAGIC)
    formats.write_raster(root / f"scenes/{name}/height.gfh", scene.heights, formats.HEIGHT_MAGIC)
    for p, img in zip(pano_paths, scene.panos):
        formats.write_raster(root / p, img, formats.RGB_MAGIC)
    rec = ManifestRecord(name, ovh, _scene_files(name, cfg.num_panos, task)[1], pano_paths,
                         scene.cameras, scene.center, scene.gsd)
    return rec.to_line()


def make_dataset(n_scenes: int, seed: int, out_dir, split_ratios=(0.7, 0.15, 0.15),
                 cfg: SceneConfig = SceneConfig(), task: str = "classification",
                 workers: int = 1) -> dict[str, list[ManifestRecord]]:
    """Render ``n_scenes`` scenes into ``out_dir`` and write one manifest per split."""
    if task not in ("classification", "regression"):
        raise ContractViolation(f"unknown task {task!r}")
    splits = split_indices(n_scenes, seed, split_ratios)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(str(out), seed, i, cfg.to_dict(), task) for i in range(n_scenes)]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            lines = list(pool.map(_write_scene, jobs, chunksize=4))
    else:
        lines = [_write_scene(j) for j in jobs]
    manifests = {}
    for split, idx in splits.items():
        text = "".join(lines[i] + "\n" for i in idx)
        (out / f"{split}.tsv").write_text(text)
        manifests[split] = [ManifestRecord.from_line(lines[i]) for i in idx]
    meta = {"seed": seed, "n_scenes": n_scenes, "split_ratios": list(split_ratios), "task": task,
            "ignore_label": IGNORE_LABEL, "scene_config": cfg.to_dict()}
    (out / "dataset.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return manifests


def read_manifest(data_dir, split: str) -> list[ManifestRecord]:
    path = Path(data_dir) / f"{split}.tsv"
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc.strerror}") from exc
    return [ManifestRecord.from_line(line) for line in text.splitlines() if line.strip()]


def read_dataset_meta(data_dir) -> dict:
    return json.loads((Path(data_dir) / "dataset.json").read_text())


def regenerate(record: ManifestRecord, cfg: SceneConfig) -> SyntheticScene:
    """Rebuild a scene from its manifest id (no disk reads)."""
    dataset_seed, index = parse_scene_name(record.scene_id)
    return make_scene(scene_seed(dataset_seed, index), cfg, scene_id=record.scene_id)


# ----------------------------------------------------------------------------
# overhead-only oracle

def overhead_bayes_accuracy(train: Iterable[SyntheticScene], test: Iterable[SyntheticScene],
                            bits: int = 3) -> tuple[float, float]:
    """Held-out accuracy of the best overhead-pixel lookup classifier on building pixels.

    Each building pixel's RGB is quantized to ``bits`` per channel; the
    classifier predicts the most frequent facade label seen for that colour
    cell in ``train`` (falling back to the overall majority). Returns
    ``(accuracy, chance)`` where chance is the majority-label rate on ``test``.
    """
    def samples(scenes):
        keys, labels = [], []
        for s in scenes:
            m = (s.labels >= 1) & (s.labels != IGNORE_LABEL)
            q = (s.overhead[m] >> (8 - bits)).astype(np.int64)
            keys.append((q[:, 0] << (2 * bits)) | (q[:, 1] << bits) | q[:, 2])
            labels.append(s.labels[m].astype(np.int64))
        return np.concatenate(keys), np.concatenate(labels)

    k_tr, y_tr = samples(train)
    k_te, y_te = samples(test)
    n_cls = int(max(y_tr.max(), y_te.max())) + 1
    table = np.zeros((1 << (3 * bits), n_cls), dtype=np.int64)
    np.add.at(table, (k_tr, y_tr), 1)
    majority = int(np.bincount(y_tr, minlength=n_cls).argmax())
    pred = np.where(table[k_te].sum(axis=1) > 0, table[k_te].argmax(axis=1), majority)
    chance = float(np.bincount(y_te, minlength=n_cls).max() / len(y_te))
    return float((pred == y_te).mean()), chance
