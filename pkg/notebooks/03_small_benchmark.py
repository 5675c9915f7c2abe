"""
A small version of the ablation benchmark
=========================================

Trains the full model, the geometry-only ablation and the overhead-only
(remote) variant on 80 scenes for 12 epochs. The acceptance suite runs the
same comparison on 200 scenes for 15 epochs.
"""
import tempfile
import time

from geofuse import synthdata
from geofuse.model import SceneDataset, Trainer, desk_config

EPOCHS = 12
root = tempfile.mkdtemp()
synthdata.make_dataset(80, 17, root)

runs = {
    "full": desk_config(seed=17, epochs=EPOCHS),
    "dist+orient": desk_config(seed=17, epochs=EPOCHS, ablation=("dist", "orient")),
    "remote": desk_config(seed=17, epochs=EPOCHS, variant="remote"),
}
print(f"{'model':<12} {'acc':>6} {'mIOU':>6} {'facade':>7} {'sec':>5}")
for name, cfg in runs.items():
    train = SceneDataset.from_dir(root, "train", cfg)
    test = SceneDataset.from_dir(root, "test", cfg)
    t0 = time.time()
    trainer = Trainer(cfg)
    for _ in range(cfg.epochs):
        trainer.train_epoch(train)
    r = trainer.evaluate(test)
    print(f"{name:<12} {100 * r.acc:6.1f} {100 * r.miou:6.1f} {100 * r.component_acc(range(1, 5)):7.1f} "
          f"{time.time() - t0:5.0f}")
