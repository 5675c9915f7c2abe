"""
Panorama geometry and geospatial attention
==========================================

A walk through the pieces that turn a (camera, target) pair into an attention
map over a panorama's feature grid.
"""

# The only requirement is the package itself
import numpy as np

from geofuse import attention as ga
from geofuse import geo
from geofuse.autodiff import Tensor

# Two locations in lower Manhattan, about 30 m apart.
camera = geo.GeoLocation(40.7000, -73.9500)
target = geo.GeoLocation(*map(float, geo.offset_location(camera, 20.0, 25.0)))
print("distance  %.2f m" % geo.haversine(camera, target))
print("bearing   %.2f deg" % geo.bearing(camera, target))

# Each panorama pixel gets a unit ray in the camera's east-north-up frame.
# Column j looks toward azimuth (j - W/2) * 360 / W, so the middle column
# faces north; rows run from +e at the top to -e at the bottom.
rays = geo.pano_ray_field(8, 32)
print("ray field", rays.shape, "norm deviation", np.abs(np.linalg.norm(rays.rays, axis=-1) - 1).max())

# Rotating about the zenith by the bearing makes [0, 1, 0] point at the target.
dist, orient = geo.distance_orientation_maps(rays, camera, target)
col = int(round(geo.bearing(camera, target) * 32 / 360 + 16)) % 32
print("orientation at the target column (horizon row):", orient[4, col].round(3))

# %%
# Augmented input: distance, three orientation channels, pooled panorama
# features and pooled overhead features -- eight channels in all. Distances
# are scaled to order one so they do not swamp the other channels.
rng = np.random.default_rng(0)
pano_feat = Tensor(rng.standard_normal((16, 8, 32)))
overhead_feat = Tensor(rng.standard_normal(24))
aug = ga.build_augmented_input(pano_feat, overhead_feat, camera, target, rays, dist_scale=0.02)
print({k: round(float(v), 3) for k, v in zip(ga.channel_layout(), aug.data[:, 0, 0])})

# A freshly initialised attention net (small uniform weights) produces a
# near-flat map around 0.5; its sum is the panorama's logit when several
# panoramas are combined.
net = ga.AttentionNet(8, rng=rng)
attn = ga.infer_attention(aug, net)
print("attention range [%.3f, %.3f], total %.2f" % (attn.values.data.min(), attn.values.data.max(),
                                                    attn.total.item()))
reduced = ga.reduce(pano_feat, attn)
print("reduced feature", reduced.vector.shape)
