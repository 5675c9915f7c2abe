"""Training and evaluation loops."""
from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .. import attention as ga
from .. import metrics
from ..autodiff import ops
from ..autodiff.checkpoint import load_checkpoint, save_checkpoint
from ..autodiff.optim import Adam
from ..autodiff.tensor import no_grad
from ..errors import ContractViolation, NumericalAbort
from .config import RunConfig
from .data import SceneDataset
from .network import Batch, NearRemoteNet

log = logging.getLogger(__name__)


def compute_loss(out, batch: Batch, cfg: RunConfig):
    if cfg.task == "classification":
        return ops.cross_entropy(out, batch.target, ignore_label=cfg.ignore_label)
    B, _, H, W = out.shape
    mean = out.transpose((1, 0, 2, 3))
    flat = mean.reshape((2, B * H * W))
    mu = _row(flat, 0).reshape((B, H, W))
    log_var = _row(flat, 1).reshape((B, H, W))
    return ops.uncertainty_loss(mu, log_var, batch.target, batch.target >= 0)


def _row(flat, i):
    sel = np.zeros((flat.shape[0], 1), dtype=flat.data.dtype)
    sel[i] = 1
    return ops.sum(ops.mul(flat, sel), axis=0)


def shuffle_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Deterministic per-epoch permutation from the shuffle substream."""
    return np.random.default_rng([seed, 2, epoch]).permutation(n)


@dataclasses.dataclass
class EvalResult:
    loss: float
    miou: float = float("nan")
    acc: float = float("nan")
    rmse: float = float("nan")
    rmse_log: float = float("nan")
    counted: int = 0
    ignored: int = 0
    confusion: Optional[np.ndarray] = None

    def component_acc(self, classes) -> float:
        """Accuracy restricted to pixels whose true label is in ``classes``."""
        c = self.confusion
        rows = np.asarray(list(classes))
        total = c[rows].sum()
        return float(c[rows, rows].sum() / total) if total else float("nan")


class Trainer:
    def __init__(self, cfg: RunConfig, model: Optional[NearRemoteNet] = None):
        self.cfg = cfg
        self.model = model or NearRemoteNet(cfg)
        self.opt = Adam(self.model.parameters(), lr=cfg.lr, gamma=cfg.gamma)
        self.history: list[dict] = []

    @property
    def epoch(self) -> int:
        return self.opt.epoch

    def train_epoch(self, data: SceneDataset, on_batch: Optional[Callable] = None) -> float:
        cfg = self.cfg
        self.model.train()
        order = shuffle_order(cfg.seed, self.epoch, len(data))
        losses = []
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2 and len(order) > 1:
                continue  # batch norm needs more than one scene
            batch = data.batch(idx)
            self.opt.zero_grad()
            out = self.model(batch)
            loss = compute_loss(out, batch, cfg)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalAbort(f"non-finite loss at epoch {self.epoch} batch {bi}")
            loss.backward()
            try:
                self.opt.step()
            except NumericalAbort as exc:
                raise NumericalAbort(f"epoch {self.epoch} batch {bi}: {exc}") from exc
            losses.append(value)
            if on_batch is not None:
                on_batch(bi, value)
        self.opt.epoch_end()
        return float(np.mean(losses))

    def evaluate(self, data: SceneDataset, batch_size: Optional[int] = None) -> EvalResult:
        return evaluate(self.model, data, batch_size or self.cfg.batch_size)

    def fit(self, train: SceneDataset, val: Optional[SceneDataset], epochs: Optional[int] = None,
            csv_path=None, ckpt_dir=None) -> list[dict]:
        epochs = self.cfg.epochs if epochs is None else epochs
        while self.epoch < epochs:
            loss = self.train_epoch(train)
            row = {"epoch": self.epoch, "loss": loss}
            if val is not None:
                r = self.evaluate(val)
                row.update(miou=r.miou, acc=r.acc, rmse=r.rmse, rmse_log=r.rmse_log)
            self.history.append(row)
            log.info("epoch %d loss %.4f %s", self.epoch, loss,
                     " ".join(f"{k} {v:.4f}" for k, v in row.items() if k not in ("epoch", "loss")))
            if csv_path is not None:
                append_csv(csv_path, row)
            if ckpt_dir is not None:
                self.save(ckpt_dir)
        return self.history

    # ------------------------------------------------------------------
    def save(self, directory) -> Path:
        arrays = self.model.state_arrays()
        arrays.update(self.opt.state_arrays())
        meta = {"config": self.cfg.to_dict(), "epoch": self.opt.epoch, "lr": self.opt.lr, "step": self.opt.t,
                "attention_channels": ga.channel_layout(self.cfg.inputs) if self.cfg.inputs else []}
        return save_checkpoint(directory, arrays, meta)

    @classmethod
    def load(cls, directory, cfg: Optional[RunConfig] = None) -> "Trainer":
        arrays, meta = load_checkpoint(directory)
        saved = RunConfig.from_dict(meta["config"])
        if cfg is not None:
            check_compatible(saved, cfg)
        tr = cls(saved)
        tr.model.load_state_arrays(arrays)
        tr.opt.load_state(arrays, lr=meta["lr"], t=meta["step"], epoch=meta["epoch"])
        return tr


# fields that change the parameter set or the meaning of the outputs
_SHAPE_FIELDS = ("image_px", "grid", "pano_channels", "pano_h", "pano_w", "num_panos", "overhead_widths",
                 "pano_widths", "fusion_widths", "decoder_widths", "task", "num_classes", "variant", "crop_deg")


def check_compatible(saved: RunConfig, cfg: RunConfig) -> None:
    for name in _SHAPE_FIELDS:
        if getattr(saved, name) != getattr(cfg, name):
            raise ContractViolation(
                f"config field {name!r} differs from the checkpoint: {getattr(cfg, name)!r} vs {getattr(saved, name)!r}")
    if saved.inputs != cfg.inputs:
        raise ContractViolation(f"config field 'ablation' differs from the checkpoint: {cfg.inputs} vs {saved.inputs}")


def predict(model: NearRemoteNet, batch: Batch) -> np.ndarray:
    """Argmax labels (classification) or mean heights (regression)."""
    model.eval()
    with no_grad():
        out = model(batch).data
    if model.cfg.task == "classification":
        return out.argmax(axis=1)
    return out[:, 0]


def evaluate(model: NearRemoteNet, data: SceneDataset, batch_size: int = 4) -> EvalResult:
    cfg = model.cfg
    model.eval()
    conf = metrics.ConfusionAccumulator(cfg.num_classes, cfg.ignore_label) if cfg.task == "classification" else None
    reg = metrics.RegressionAccumulator()
    losses, weights = [], []
    with no_grad():
        for start in range(0, len(data), batch_size):
            batch = data.batch(list(range(start, min(start + batch_size, len(data)))))
            out = model(batch)
            losses.append(float(compute_loss(out, batch, cfg).data))
            weights.append(batch.size)
            if conf is not None:
                conf.accumulate(out.data.argmax(axis=1), batch.target)
            else:
                reg.accumulate(out.data[:, 0], batch.target, batch.target >= 0)
    loss = float(np.average(losses, weights=weights))
    if conf is not None:
        miou, acc = metrics.miou_acc(conf)
        return EvalResult(loss, miou=miou, acc=acc, counted=conf.counted, ignored=conf.ignored,
                          confusion=conf.counts.copy())
    rmse, rmse_log = reg.result()
    return EvalResult(loss, rmse=rmse, rmse_log=rmse_log, counted=reg.n)


def append_csv(path, row: dict) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a") as fh:
        if new:
            fh.write(metrics.CSV_HEADER + "\n")
        fh.write(metrics.csv_row(row["epoch"], row["loss"], row.get("miou"), row.get("acc"),
                                 row.get("rmse"), row.get("rmse_log")) + "\n")
