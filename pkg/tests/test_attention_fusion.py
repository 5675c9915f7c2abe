import numpy as np
import pytest

from geofuse import attention as ga
from geofuse import fusion, geo
from geofuse.autodiff import Tensor, ops
from geofuse.errors import ContractViolation
from geofuse.geo import GeoLocation

CAM = GeoLocation(40.7, -73.95)


def offset(east, north, origin=CAM):
    lat, lon = geo.offset_location(origin, east, north)
    return GeoLocation(float(lat), float(lon))


@pytest.fixture
def rays():
    return geo.pano_ray_field(4, 16)


def feat(rng, C=6, H=4, W=16, grad=False):
    return Tensor(rng.standard_normal((C, H, W)), requires_grad=grad)


def test_augmented_input_layout(rays):
    rng = np.random.default_rng(0)
    f = feat(rng)
    ovh = Tensor(rng.standard_normal(5))
    aug = ga.build_augmented_input(f, ovh, CAM, offset(30, 40), rays).data
    assert aug.shape == (8, 4, 16)
    assert np.all(aug[0] == aug[0, 0, 0]) and aug[0, 0, 0] == pytest.approx(50.0, rel=1e-6)
    assert np.abs(np.linalg.norm(aug[1:4], axis=0) - 1).max() < 1e-9
    np.testing.assert_allclose(aug[4], f.data.max(axis=0))
    np.testing.assert_allclose(aug[5], f.data.mean(axis=0), rtol=1e-12)
    assert np.all(aug[6] == ovh.data.max()) and np.allclose(aug[7], ovh.data.mean())
    assert ga.channel_layout() == ["dist", "orient_e", "orient_n", "orient_u", "pano_max", "pano_avg",
                                   "ovh_max", "ovh_avg"]


@pytest.mark.parametrize("inputs, width", [(("dist", "orient"), 4), (("pano_pool",), 2),
                                           (("overhead_pool",), 2), (None, 8)])
def test_ablation_widths(inputs, width):
    assert ga.attention_width(inputs) == width


def test_unknown_ablation_input_rejected():
    with pytest.raises(ContractViolation):
        ga.normalize_inputs({"colour"})


def test_zero_params_give_half_attention(rays):
    net = ga.AttentionNet(8)
    net.zero_()
    rng = np.random.default_rng(1)
    aug = ga.build_augmented_input(feat(rng), Tensor(rng.standard_normal(3)), CAM, offset(5, 0), rays)
    attn = ga.infer_attention(aug, net)
    assert np.all(attn.values.data == 0.5)
    assert attn.total.item() == pytest.approx(4 * 16 / 2)


def test_attention_in_open_unit_interval(rays):
    rng = np.random.default_rng(2)
    net = ga.AttentionNet(8, rng=rng, init_scale=1.0)
    aug = ga.build_augmented_input(feat(rng), Tensor(rng.standard_normal(3)), CAM, offset(-7, 3), rays)
    p = ga.infer_attention(aug, net).values.data
    assert p.min() > 0 and p.max() < 1


def test_attention_net_kernel_shapes():
    net = ga.AttentionNet(8)
    shapes = {k: v.shape for k, v in net.parameters().items()}
    assert shapes["conv3_w"] == (1, 8, 3, 3) and shapes["conv5_w"] == (1, 8, 5, 5)
    assert shapes["conv1_w"] == (1, 2, 1, 1)


def test_reduce_uniform_and_one_hot():
    rng = np.random.default_rng(3)
    f = feat(rng)
    half = ga.AttentionMap(Tensor(np.full((4, 16), 0.5)), Tensor(np.array(32.0)))
    np.testing.assert_allclose(ga.reduce(f, half).vector.data, 0.5 * f.data.sum(axis=(1, 2)), rtol=1e-12)
    onehot = np.zeros((4, 16))
    onehot[2, 9] = 1
    red = ga.reduce(f, ga.AttentionMap(Tensor(onehot), Tensor(np.array(1.0))))
    np.testing.assert_array_equal(red.vector.data, f.data[:, 2, 9])


def test_channel_permutation_permutes_reduced_vector(rays):
    rng = np.random.default_rng(4)
    net = ga.AttentionNet(8, rng=rng, init_scale=0.5)
    f = feat(rng)
    ovh = Tensor(rng.standard_normal(4))
    perm = rng.permutation(6)
    tgt = offset(12, -9)
    a = ga.infer_attention(ga.build_augmented_input(f, ovh, CAM, tgt, rays), net)
    fp = Tensor(f.data[perm])
    b = ga.infer_attention(ga.build_augmented_input(fp, ovh, CAM, tgt, rays), net)
    np.testing.assert_array_equal(a.values.data, b.values.data)
    np.testing.assert_allclose(ga.reduce(fp, b).vector.data, ga.reduce(f, a).vector.data[perm], rtol=1e-12)


def test_gradient_reaches_every_input_and_kernel(rays):
    rng = np.random.default_rng(5)
    net = ga.AttentionNet(8, rng=rng, init_scale=0.3, dtype=np.float64)
    f = feat(rng, grad=True)
    ovh = Tensor(rng.standard_normal(4), requires_grad=True)
    aug = ga.build_augmented_input(f, ovh, CAM, offset(20, 20), rays)
    red = ga.reduce(f, ga.infer_attention(aug, net))
    ops.sum(ops.mul(red.vector, rng.standard_normal(6))).backward()
    for name, p in net.parameters().items():
        assert p.grad is not None and np.abs(p.grad).max() > 0, name
    assert np.abs(f.grad).max() > 0 and np.abs(ovh.grad).max() > 0


def test_attention_gradient_wrt_augmented_input_matches_finite_differences():
    rng = np.random.default_rng(6)
    net = ga.AttentionNet(8, rng=rng, init_scale=0.3, dtype=np.float64)
    x0 = rng.standard_normal((8, 4, 16))
    x = Tensor(x0.copy(), requires_grad=True)
    ops.sum(net(x)).backward()
    h, num = 1e-3, np.zeros_like(x0)
    for idx in np.ndindex(x0.shape):
        xp, xm = x0.copy(), x0.copy()
        xp[idx] += h
        xm[idx] -= h
        num[idx] = (net(Tensor(xp)).data.sum() - net(Tensor(xm)).data.sum()) / (2 * h)
    assert np.abs(x.grad - num).max() / np.abs(num).max() < 1e-4


# ----------------------------------------------------------------------------
# fusion

def pano_set(rng, cams, valid=None, C=6):
    return fusion.PanoSet([feat(rng, C) for _ in cams], cams, valid or [True] * len(cams))


def test_single_panorama_weight_one(rays):
    rng = np.random.default_rng(7)
    net = ga.AttentionNet(8, rng=rng)
    ps = pano_set(rng, [CAM])
    ovh = Tensor(rng.standard_normal(3))
    tgt = offset(10, 10)
    fused, w = fusion.fuse_target(ps, ovh, tgt, net, rays)
    red = ga.reduce(ps.features[0], ga.infer_attention(
        ga.build_augmented_input(ps.features[0], ovh, CAM, tgt, rays), net))
    assert w.data[0] == 1.0
    np.testing.assert_allclose(fused.data, red.vector.data, rtol=1e-12)


def test_symmetric_panoramas_split_evenly(rays):
    rng = np.random.default_rng(8)
    net = ga.AttentionNet(8, rng=rng)
    f = feat(rng)
    tgt = offset(0, 0)
    # mirror cameras east/west of the target see mirror-image geometry; zero
    # orientation weights leave only distance and pooled inputs, which agree
    net.conv3_w.data[:, 1:4] = 0
    net.conv5_w.data[:, 1:4] = 0
    ps = fusion.PanoSet([f, f], [offset(15, 0), offset(-15, 0)], [True, True])
    _, w = fusion.fuse_target(ps, Tensor(np.ones(2)), tgt, net, rays)
    np.testing.assert_allclose(w.data, [0.5, 0.5], atol=1e-7)


def test_weights_follow_softmax_of_totals():
    totals = Tensor(np.array([1.0, 2.0, 3.0]))
    w = ops.softmax(ops.add(totals, fusion.mask_logits([True] * 3, np.float64)), axis=0).data
    e = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(w, e / e.sum(), rtol=1e-12)


def test_masked_panorama_gets_zero_weight(rays):
    rng = np.random.default_rng(9)
    net = ga.AttentionNet(8, rng=rng)
    cams = [offset(5, 5), offset(-20, 3), offset(9, -14)]
    ps = pano_set(rng, cams, [True, False, True])
    fused, w = fusion.fuse_target(ps, Tensor(rng.standard_normal(3)), offset(1, 1), net, rays)
    assert w.data[1] == 0.0 and abs(w.data.sum() - 1) < 1e-6
    assert np.isfinite(fused.data).all()


def test_all_masked_is_an_error(rays):
    rng = np.random.default_rng(10)
    ps = pano_set(rng, [CAM], [False])
    with pytest.raises(ContractViolation):
        fusion.fuse_target(ps, None, offset(3, 3), ga.AttentionNet(8), rays, inputs=("dist", "orient", "pano_pool"))


def test_dense_grid_cell_equals_standalone_fusion(rays):
    rng = np.random.default_rng(11)
    net = ga.AttentionNet(8, rng=rng)
    grid = geo.overhead_geogrid(CAM, 16, 2.0, 2)
    ps = pano_set(rng, [offset(3, 1), offset(-2, -5)])
    ovh = Tensor(rng.standard_normal((3, 2, 2)))
    dense = fusion.build_dense_grid(ps, ovh, grid, net, rays)
    assert dense.features.shape == (1, 6, 2, 2)
    fused, _ = fusion.fuse_target(ps, Tensor(ovh.data[:, 1, 0]), grid.location(1, 0), net, rays)
    np.testing.assert_allclose(dense.features.data[0, :, 1, 0], fused.data, rtol=1e-12)
    np.testing.assert_allclose(dense.weights.sum(axis=0), 1.0, atol=1e-6)


def test_batched_fusion_matches_per_target_path(rays):
    rng = np.random.default_rng(12)
    net = ga.AttentionNet(8, rng=rng, init_scale=0.3, dtype=np.float64)
    grid = geo.overhead_geogrid(CAM, 16, 2.0, 2)
    cams = [offset(3, 1), offset(-2, -5), offset(4, -4)]
    ps = pano_set(rng, cams)
    ovh = rng.standard_normal((3, 2, 2))
    tl, tn = grid.flat()
    dist, orient = ga.geometry_maps(rays, np.array([[c.lat for c in cams]]), np.array([[c.lon for c in cams]]),
                                    tl[None], tn[None])
    pf = Tensor(np.stack([f.data for f in ps.features])[None])
    ovh_t = Tensor(ovh.reshape(3, 4).T[None])
    fused, w, _ = fusion.fuse_batched(pf, np.ones((1, 3), bool), dist, orient, ovh_t, net, ga.INPUT_ORDER)
    for t in range(4):
        r, c = divmod(t, 2)
        ref, wref = fusion.fuse_target(ps, Tensor(ovh[:, r, c]), grid.location(r, c), net, rays)
        np.testing.assert_allclose(fused.data[0, t], ref.data, rtol=1e-9)
        np.testing.assert_allclose(w.data[0, t], wref.data, rtol=1e-9)


def test_batched_geometry_rejects_camera_on_target(rays):
    with pytest.raises(ContractViolation, match="undefined bearing"):
        ga.geometry_maps(rays, np.array([[CAM.lat]]), np.array([[CAM.lon]]),
                         np.array([[CAM.lat]]), np.array([[CAM.lon]]))
