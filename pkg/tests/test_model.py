import numpy as np
import pytest

from geofuse.errors import ConfigError, ContractViolation, NumericalAbort
from geofuse.model import NearRemoteNet, Trainer, desk_config, parse_config
from geofuse.model.config import ABLATION_ROWS
from geofuse.model.train import check_compatible, compute_loss


# ----------------------------------------------------------------------------
# configuration

def test_config_text_roundtrip():
    cfg = desk_config(variant="full", ablation=("dist", "orient"), seed=4)
    assert parse_config(cfg.to_text()) == cfg


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match="line 3: unknown key 'colour'"):
        parse_config("seed = 1\n# comment\ncolour = red\n")


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("epochs = many")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("seed = 1\nseed = 2\n")


@pytest.mark.parametrize("text", ["variant = remote\nablation = pano_pool",
                                  "variant = proximate\nablation = overhead_pool,dist",
                                  "ablation = none",
                                  "variant = sideways"])
def test_contradictory_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize("row, width", [("pano", 2), ("overhead", 2), ("dist", 1), ("orient", 3),
                                        ("geometry", 4), ("pano+geometry", 6), ("overhead+geometry", 6),
                                        ("full", 8)])
def test_ablation_rows_set_attention_width(row, width):
    cfg = desk_config(ablation=ABLATION_ROWS[row])
    assert cfg.attention_width == width
    assert NearRemoteNet(cfg).attention.in_channels == width


def test_variant_default_inputs():
    assert desk_config(variant="remote").inputs == ()
    assert "overhead_pool" not in desk_config(variant="proximate").inputs


def test_checkpoint_mismatch_names_field():
    with pytest.raises(ContractViolation, match="pano_channels"):
        check_compatible(desk_config(), desk_config(pano_channels=16))


# ----------------------------------------------------------------------------
# network

def test_desk_shapes(tiny_dataset):
    cfg = desk_config()
    ds = tiny_dataset(cfg, n=2)
    rec = {}
    out = NearRemoteNet(cfg)(ds.batch([0, 1]), record=rec)
    assert rec["feat_hi"].shape == (2, 16, 16, 16)
    assert rec["feat_lo"].shape == (2, 24, 8, 8)
    assert rec["pano_features"].shape == (2, 4, 32, 4, 16)
    assert rec["grid"].shape == (2, 32, 8, 8)
    assert rec["fusion_in"].shape == (2, 24 + 32, 8, 8)
    assert rec["d1"].shape == (2, 32, 4, 4) and rec["d2"].shape == (2, 48, 2, 2)
    assert len(rec["decoder_inputs"]) == 4
    assert out.shape == (2, 5, 64, 64)


@pytest.mark.parametrize("variant", ["remote", "proximate"])
def test_variant_output_shape_matches_full(tiny_dataset, variant):
    cfg = desk_config(variant=variant)
    ds = tiny_dataset(cfg, n=2)
    assert NearRemoteNet(cfg)(ds.batch([0, 1])).shape == (2, 5, 64, 64)


def test_remote_ignores_panoramas(tiny_dataset):
    full_cfg = desk_config()
    batch = tiny_dataset(full_cfg, n=2).batch([0, 1])
    net = NearRemoteNet(desk_config(variant="remote")).eval()
    a = net(batch).data
    batch.panos = np.random.default_rng(0).standard_normal(batch.panos.shape).astype(np.float32)
    b = net(batch).data
    batch.panos = None
    c = net(batch).data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)


def test_proximate_ignores_overhead_pixels(tiny_dataset):
    cfg = desk_config(variant="proximate")
    batch = tiny_dataset(cfg, n=2).batch([0, 1])
    net = NearRemoteNet(cfg).eval()
    a = net(batch).data
    batch.overhead = np.random.default_rng(1).standard_normal(batch.overhead.shape).astype(np.float32)
    np.testing.assert_array_equal(a, net(batch).data)


def test_full_variant_attention_gradients_live(tiny_dataset):
    cfg = desk_config()
    batch = tiny_dataset(cfg, n=2).batch([0, 1])
    net = NearRemoteNet(cfg)
    compute_loss(net(batch), batch, cfg).backward()
    for name, p in net.attention.parameters().items():
        assert p.grad is not None and np.abs(p.grad).max() > 0, name
    missing = [k for k, p in net.parameters().items() if p.grad is None]
    assert not missing


def test_decoder_demands_four_inputs():
    net = NearRemoteNet(desk_config())
    with pytest.raises(ContractViolation, match="four|4 input"):
        net.decoder([None, None, None])


def test_block_channel_mismatch_names_stage():
    net = NearRemoteNet(desk_config())
    from geofuse.autodiff import Tensor
    with pytest.raises(ContractViolation, match="block1"):
        net.block1.convs.layers[0].conv(Tensor(np.zeros((1, 3, 8, 8), np.float32)))


def test_same_seed_same_initial_encoders_across_ablations():
    a = NearRemoteNet(desk_config(seed=3)).parameters()
    b = NearRemoteNet(desk_config(seed=3, ablation=("pano_pool",))).parameters()
    for k in a:
        if k.startswith(("ovh.", "pano.", "block", "dec.")):
            np.testing.assert_array_equal(a[k].data, b[k].data)


# ----------------------------------------------------------------------------
# training

def test_lr_schedule(tiny_dataset):
    cfg = desk_config(lr=1e-4, batch_size=3)
    tr = Trainer(cfg)
    ds = tiny_dataset(cfg, n=3)
    for e in range(1, 3):
        tr.train_epoch(ds)
        assert abs(tr.opt.lr - 1e-4 * 0.96 ** e) < 1e-15


def test_training_is_deterministic(tiny_dataset):
    cfg = desk_config(seed=8, batch_size=3)
    ds = tiny_dataset(cfg, n=6)
    runs = []
    for _ in range(2):
        tr = Trainer(cfg)
        runs.append([tr.train_epoch(ds) for _ in range(2)] + [tr.evaluate(ds).acc])
    np.testing.assert_allclose(runs[0], runs[1], atol=1e-6, rtol=0)


def test_resume_continues_schedule(tiny_dataset, tmp_path):
    cfg = desk_config(seed=2, batch_size=3)
    ds = tiny_dataset(cfg, n=6)
    straight = Trainer(cfg)
    ref = [straight.train_epoch(ds) for _ in range(3)]
    first = Trainer(cfg)
    losses = [first.train_epoch(ds) for _ in range(2)]
    first.save(tmp_path / "ck")
    resumed = Trainer.load(tmp_path / "ck")
    assert resumed.epoch == 2 and resumed.opt.lr == pytest.approx(cfg.lr * cfg.gamma ** 2, rel=1e-12)
    losses.append(resumed.train_epoch(ds))
    np.testing.assert_allclose(losses, ref, atol=1e-6, rtol=0)
    assert resumed.opt.lr == pytest.approx(straight.opt.lr, rel=1e-12)


def test_nan_loss_aborts_with_batch_id(tiny_dataset):
    cfg = desk_config(batch_size=3)
    tr = Trainer(cfg)
    tr.model.decoder.head.bias.data[:] = np.nan
    with pytest.raises(NumericalAbort, match="batch 0"):
        tr.train_epoch(tiny_dataset(cfg, n=6))


def test_regression_task_trains(tiny_dataset):
    cfg = desk_config(task="regression", batch_size=3)
    ds = tiny_dataset(cfg, n=3, task="regression")
    tr = Trainer(cfg)
    loss = tr.train_epoch(ds)
    assert np.isfinite(loss)
    r = tr.evaluate(ds)
    assert np.isfinite(r.rmse) and np.isfinite(r.rmse_log) and r.counted == 3 * 60 * 60


def test_overfits_ten_scenes(tiny_dataset):
    cfg = desk_config(seed=0, batch_size=5, lr=3e-3, gamma=1.0)
    ds = tiny_dataset(cfg, n=10)
    tr = Trainer(cfg)
    best = np.inf
    for _ in range(200):
        best = min(best, tr.train_epoch(ds))
        if best < 0.1:
            break
    assert best < 0.1, best
