import numpy as np
import pytest

from robustseg import tensor as T
from robustseg.errors import ContractError, DimensionError
from robustseg.model.robust import (
    AMFG,
    AOTG,
    VARIANTS,
    Fusion,
    RobustPath,
    Variant,
    fourier_suppress,
    init_from_teacher,
)
from robustseg.model.sam import SamMini, to_nchw
from robustseg.data import generate_scene
from robustseg.tensor import grad_check


def projection(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


def param_grad_check(module, loss_fn, per_param=2, h=1e-5, seed=0):
    """Finite differences on sampled parameter entries, all in float64."""
    with T.precision(np.float64):
        named = list(module.named_parameters())
        for _, p in named:
            p.data = p.data.astype(np.float64)
            p.grad = None
        loss = loss_fn()
        T.backward(loss, params=[p for _, p in named])
        rng = np.random.default_rng(seed)
        worst = 0.0
        for name, p in named:
            flat, g = p.data.reshape(-1), p.grad.reshape(-1)
            for i in rng.choice(flat.size, size=min(per_param, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + h
                with T.no_grad():
                    fp = loss_fn().item()
                flat[i] = orig - h
                with T.no_grad():
                    fm = loss_fn().item()
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                worst = max(worst, abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-6))
    return worst


@pytest.fixture(scope="module")
def teacher():
    return SamMini(seed=0).freeze()


def test_amfg_shape_and_selector_convexity():
    amfg = AMFG(np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(3, 64, 16, 16)).astype(np.float32) * 4
    y = amfg(T.Tensor(x))
    assert y.shape == (3, 32, 64, 64)
    a_in, a_bn = amfg.last["a_in"], amfg.last["a_bn"]
    assert np.abs(a_in + a_bn - 1).max() <= 1e-6
    assert (a_in > 0).all() and (a_in < 1).all()
    with pytest.raises(DimensionError):
        amfg(T.Tensor(np.zeros((1, 64, 8, 8), np.float32)))


@pytest.mark.parametrize("seed", range(3))
def test_amfg_input_gradient(seed):
    amfg = AMFG(np.random.default_rng(seed))
    x = np.random.default_rng(seed + 10).normal(size=(2, 64, 16, 16))
    p = projection((2, 32, 64, 64), seed)
    rep = grad_check(lambda v: T.tsum(amfg(v) * p), [x], max_entries=25, seed=seed)
    assert rep.passed, rep


def test_amfg_parameter_gradients():
    amfg = AMFG(np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(2, 64, 16, 16))
    p = projection((2, 32, 64, 64), 5)
    assert param_grad_check(amfg, lambda: T.tsum(amfg(T.Tensor(x)) * p)) < 1e-3


def test_fourier_identity_init_is_near_identity():
    amfg = AMFG(np.random.default_rng(0))
    x = np.random.default_rng(2).uniform(-10, 10, size=(2, 64, 16, 16)).astype(np.float32)
    trace = {}
    y = fourier_suppress(T.Tensor(x), amfg.amp_conv, trace).data
    assert np.abs(y - x).max() <= 1e-4
    assert trace["synthesis_phase"] is trace["analysis_phase"]


def test_fourier_zero_amplitude():
    amfg = AMFG(np.random.default_rng(0))
    amfg.amp_conv.weight.data[...] = 0
    x = np.random.default_rng(3).normal(size=(1, 64, 16, 16)).astype(np.float32)
    assert np.abs(fourier_suppress(T.Tensor(x), amfg.amp_conv).data).max() <= 1e-5


def test_fourier_gradient():
    amfg = AMFG(np.random.default_rng(1))
    amfg.amp_conv.weight.data += np.random.default_rng(2).normal(0, 0.05, amfg.amp_conv.weight.shape).astype(np.float32)
    x = np.random.default_rng(4).normal(size=(1, 64, 8, 8))
    p = projection((1, 64, 8, 8), 6)
    rep = grad_check(lambda v: T.tsum(fourier_suppress(v, amfg.amp_conv) * p), [x], max_entries=40)
    assert rep.passed, rep


def test_aotg_constant_token_reduces_to_biases():
    aotg = AOTG(np.random.default_rng(0))
    out = aotg(T.Tensor(np.full((1, 64), 3.0, np.float32))).data[0]
    hidden = np.maximum(aotg.fc1.bias.data, 0)
    want = hidden @ aotg.fc2.weight.data + aotg.fc2.bias.data
    np.testing.assert_allclose(out, want, rtol=1e-5, atol=1e-6)
    assert aotg(T.Tensor(np.zeros(64, np.float32))).shape == (64,)
    with pytest.raises(DimensionError):
        aotg(T.Tensor(np.zeros((1, 32), np.float32)))


def test_aotg_gradients():
    aotg = AOTG(np.random.default_rng(1))
    t = np.random.default_rng(2).normal(size=(3, 64))
    p = projection((3, 64), 3)
    assert grad_check(lambda v: T.tsum(aotg(v) * p), [t]).passed
    assert param_grad_check(aotg, lambda: T.tsum(aotg(T.Tensor(t)) * p)) < 1e-3


def test_fusion_shape_zero_and_gradient():
    fuse = Fusion(np.random.default_rng(0))
    a = np.random.default_rng(1).normal(size=(2, 32, 64, 64)).astype(np.float32)
    assert fuse(T.Tensor(a), T.Tensor(a)).shape == (2, 32, 64, 64)
    fuse.mix.bias.data[...] = 0
    fuse.smooth.bias.data[...] = 0
    z = np.zeros((1, 32, 64, 64), np.float32)
    assert not fuse(T.Tensor(z), T.Tensor(z)).data.any()
    with pytest.raises(DimensionError):
        fuse(T.Tensor(z), T.Tensor(np.zeros((1, 32, 32, 32), np.float32)))
    small = Fusion(np.random.default_rng(2))
    x1 = np.random.default_rng(3).normal(size=(1, 32, 8, 8))
    x2 = np.random.default_rng(4).normal(size=(1, 32, 8, 8))
    p = projection((1, 32, 8, 8), 5)
    assert grad_check(lambda u, v: T.tsum(small(u, v) * p), [x1, x2], max_entries=30).passed


def test_init_from_teacher(teacher):
    with pytest.raises(ContractError):
        RobustPath(SamMini(seed=0))
    a = init_from_teacher(teacher, seed=7)
    b = init_from_teacher(teacher, seed=7)
    assert a.rot.data.tobytes() == teacher.decoder.output_token.data.tobytes()
    assert a.rot is not teacher.decoder.output_token
    sa, sb = a.state_dict(), b.state_dict()
    assert list(sa) == list(sb) and all(sa[k].tobytes() == sb[k].tobytes() for k in sa)
    np.testing.assert_array_equal(a.amfg_mask.amp_conv.weight.data[:, :, 0, 0], np.eye(64))
    np.testing.assert_array_equal(a.amfg_mask.se_fc2.bias.data, 2.0)
    np.testing.assert_array_equal(a.amfg_comp.inorm.gamma.data, 1.0)
    np.testing.assert_array_equal(a.amfg_comp.bnorm.beta.data, 0.0)
    # the robust MLP is a copy, not a view of the teacher's
    assert a.mask_mlp.layers[0].weight is not teacher.mask_mlp.layers[0].weight
    assert all(p.requires_grad for p in a.mask_mlp.parameters())
    assert all(not p.requires_grad for p in teacher.parameters())


@pytest.mark.parametrize("name", sorted(VARIANTS))
def test_variant_forward_and_trainable_sets(teacher, name):
    robust = init_from_teacher(teacher, seed=1, variant=VARIANTS[name])
    imgs = to_nchw(np.stack([generate_scene(s).image for s in range(2)]))
    out = robust.forward(teacher, imgs, np.array([[[30.0, 40.0]], [[80.0, 90.0]]]), "point")
    assert out.logits.shape == (2, 128, 128)
    assert out.feature.shape == out.f_mfd_hat.shape == out.f_cfd_hat.shape == (2, 32, 64, 64)
    assert out.t_ro_hat.shape == (2, 64)
    ids = {id(p) for p in robust.trainable()}
    v = VARIANTS[name]
    assert (id(robust.rot) in ids) == v.use_rot
    assert (id(robust.aotg.fc1.weight) in ids) == v.use_aotg
    assert (id(robust.amfg_mask.conv_in.weight) in ids) == v.use_amfg
    assert (id(robust.amfg_mask.amp_conv.weight) in ids) == (v.use_amfg and v.use_fourier)
    assert not ids & {id(p) for p in teacher.parameters()}
    assert Variant(**v.__dict__).name == name


def test_token_only_matches_teacher_at_init(teacher):
    robust = init_from_teacher(teacher, seed=0, variant=VARIANTS["token_only"])
    imgs = to_nchw(np.stack([generate_scene(3).image]))
    c = np.array([[[50.0, 60.0]]])
    a = robust.forward(teacher, imgs, c, "point").logits.data
    b = teacher.forward(imgs, c, "point").data
    assert a.tobytes() == b.tobytes()


def test_gradients_flow_only_into_robust_parameters(teacher):
    robust = init_from_teacher(teacher, seed=2)
    robust.train()
    imgs = to_nchw(np.stack([generate_scene(s).image for s in range(2)]))
    out = robust.forward(teacher, imgs, np.array([[[30.0, 40.0]], [[80.0, 90.0]]]), "point")
    T.backward(T.tsum(out.logits * 1e-3), params=robust.trainable())
    assert np.abs(robust.rot.grad).sum() > 0
    assert np.abs(robust.amfg_mask.conv_bn.weight.grad).sum() > 0
    assert all(p.grad is None for p in teacher.parameters())


def test_bn_running_stats_used_in_eval(teacher):
    robust = init_from_teacher(teacher, seed=3)
    robust.train()
    imgs = to_nchw(np.stack([generate_scene(s).image for s in range(2)]))
    c = np.array([[[30.0, 40.0]], [[80.0, 90.0]]])
    with T.no_grad():
        robust.forward(teacher, imgs, c, "point")
    robust.eval()
    with T.no_grad():
        a = robust.forward(teacher, imgs[:1], c[:1], "point").logits.data
        b = robust.forward(teacher, imgs, c, "point").logits.data[:1]
    # eval mode is per-sample: batch composition no longer matters
    np.testing.assert_allclose(a, b, atol=1e-5)
