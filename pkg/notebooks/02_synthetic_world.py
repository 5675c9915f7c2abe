"""
The synthetic city
==================

Scenes are small box-building worlds. The overhead view shows roofs, which
carry no facade colour; the label of a building pixel is its facade class,
which only the street-level panoramas can see.
"""
from pathlib import Path

import numpy as np

from geofuse import formats
from geofuse import synthdata as sd

out = Path("notebook_output")
out.mkdir(exist_ok=True)

scene = sd.make_scene(sd.scene_seed(17, 0))
print("overhead", scene.overhead.shape, "panoramas", scene.panos.shape)
print("cameras (m from tile centre):\n", scene.cameras_m.round(1))

# Label histogram: 0 ground, 1..4 facade class, 255 unknown border
values, counts = np.unique(scene.labels, return_counts=True)
print(dict(zip(values.tolist(), counts.tolist())))

# Dump a grayscale overhead and one panorama for a quick look.
formats.write_pgm(out / "overhead.pgm", scene.overhead.mean(axis=2) / 255)
formats.write_pgm(out / "pano0.pgm", scene.panos[0].mean(axis=2) / 255)

# %%
# How much of the label can be read off the overhead colour alone? A
# per-colour majority vote barely beats always guessing the commonest class.
train = [sd.make_scene(sd.scene_seed(17, i)) for i in range(1, 25)]
test = [sd.make_scene(sd.scene_seed(17, i)) for i in range(25, 35)]
acc, chance = sd.overhead_bayes_accuracy(train, test)
print(f"overhead-only Bayes accuracy {acc:.3f} vs majority-class rate {chance:.3f}")
