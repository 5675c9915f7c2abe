import pytest

from geofuse import synthdata as sd
from geofuse.model import SceneDataset, desk_config, scene_from_synthetic


@pytest.fixture(scope="session")
def tiny_scenes():
    return [sd.make_scene(sd.scene_seed(5, i)) for i in range(10)]


@pytest.fixture
def tiny_dataset(tiny_scenes):
    def make(cfg=None, n=6, task="classification"):
        cfg = cfg or desk_config()
        load = cfg.uses_panoramas
        return SceneDataset([scene_from_synthetic(s, task, load) for s in tiny_scenes[:n]], cfg)
    return make
