"""Near/remote segmentation model: configuration, network, data and training."""
from .config import RunConfig, desk_config, load_config, full_scale_config, parse_config
from .data import SceneData, SceneDataset, scene_from_synthetic
from .network import Batch, NearRemoteNet, encode_overhead, encode_pano
from .train import EvalResult, Trainer, evaluate, predict

__all__ = ["RunConfig", "desk_config", "load_config", "full_scale_config", "parse_config",
           "SceneData", "SceneDataset", "scene_from_synthetic", "Batch", "NearRemoteNet",
           "encode_overhead", "encode_pano", "EvalResult", "Trainer", "evaluate", "predict"]
