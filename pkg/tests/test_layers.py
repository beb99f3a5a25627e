import numpy as np
import pytest

from mbcrnet.layers import ConvUnit, DbcrnBlock, FusionHead
from mbcrnet.model import build_model, mini_spec
from mbcrnet.tensor import ShapeError, Tensor, backward, tsum


def test_conv_unit_block1_shape(rng):
    unit = ConvUnit(8, 8, (1, 50), (1, 2), "valid", rng)
    out = unit(Tensor(rng.normal(size=(1, 8, 8, 976))))
    assert out.shape == (1, 8, 8, 464)


def test_conv_unit_zero_kernel_gives_zero(rng):
    unit = ConvUnit(2, 3, (1, 5), rng=rng)
    unit.kernel.data[...] = 0.0
    out = unit(Tensor(rng.normal(size=(2, 2, 1, 20))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_conv_unit_output_nonnegative(rng):
    unit = ConvUnit(2, 3, (1, 5), rng=rng)
    assert unit(Tensor(rng.normal(size=(2, 2, 3, 20)))).data.min() >= 0


def test_conv_unit_channel_mismatch(rng):
    with pytest.raises(ShapeError, match="channel mismatch"):
        ConvUnit(2, 3, (1, 5), rng=rng)(Tensor(np.zeros((1, 4, 1, 10))))


def test_conv_unit_order_switch(rng):
    x = Tensor(rng.normal(size=(2, 2, 1, 20)))
    a = ConvUnit(2, 3, (1, 5), rng=np.random.default_rng(0))
    b = ConvUnit(2, 3, (1, 5), rng=np.random.default_rng(0), order="conv-relu-bn")
    assert not np.array_equal(a(x).data, b(x).data)
    # BN output of the swapped order is zero-mean per channel, so it goes negative
    assert b(x).data.min() < 0
    with pytest.raises(ValueError):
        ConvUnit(2, 3, (1, 5), order="bn-conv")


@pytest.mark.parametrize(
    "cin,depth,width,expected",
    [(8, 8, 976, 464), (8, 16, 464, 208), (16, 32, 208, 80), (32, 64, 80, 16)],
)
def test_dbcrn_paper_shapes(rng, cin, depth, width, expected):
    block = DbcrnBlock(cin, depth, 50, rng)
    out = block(Tensor(rng.normal(size=(1, cin, 8, width))))
    assert out.shape == (1, depth, 8, expected)


def test_dbcrn_identical_branches_double(rng):
    block = DbcrnBlock(2, 3, 5, rng)
    for ua, ub in zip(block.branch_a, block.branch_b):
        ub.kernel.data = ua.kernel.data.copy()
    x = Tensor(rng.normal(size=(2, 2, 2, 30)))
    single = block.branch_a[1](block.branch_a[0](x))
    np.testing.assert_array_equal(block.branch_sum(x).data, 2 * single.data)


def test_dbcrn_identity_shortcut_exact(rng):
    block = DbcrnBlock(2, 3, 5, rng)
    block.res_conv_2.kernel.data[...] = 0.0
    block.res_conv_2.beta.data[...] = 0.0
    x = Tensor(rng.normal(size=(2, 2, 2, 30)))
    s = block.branch_sum(x, "train")
    out = block(x, "train")
    assert out.data.tobytes() == s.data.tobytes()


def test_dbcrn_branches_have_independent_weights(rng):
    block = DbcrnBlock(2, 3, 5, rng)
    for ua, ub in zip(block.branch_a, block.branch_b):
        assert ua.kernel.shape == ub.kernel.shape and ua.stride == ub.stride
        assert not np.array_equal(ua.kernel.data, ub.kernel.data)


@pytest.mark.parametrize("variant,flat", [("T", 1024), ("L", 512), ("F", 8192)])
def test_fusion_flattened_length(rng, variant, flat):
    head = FusionHead(variant, 64, 8, 16, rng)
    out = head(Tensor(rng.normal(size=(1, 64, 8, 16))))
    assert out.shape == (1, flat)
    assert head.out_features == flat


def test_fusion_wrong_extent(rng):
    with pytest.raises(ShapeError):
        FusionHead("L", 64, 8, 16, rng)(Tensor(np.zeros((1, 64, 8, 15))))


def test_init_deterministic_and_bn_defaults():
    a = build_model(mini_spec("L"), 3)
    b = build_model(mini_spec("L"), 3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
        if na.endswith("gamma"):
            assert np.all(pa.data == 1.0)
        if na.endswith(("beta", "bias")):
            assert np.all(pa.data == 0.0)


def test_init_std_matches_he(rng):
    unit = ConvUnit(64, 64, (1, 16), rng=rng)  # 65536 samples, fan_in 1024
    expected = np.sqrt(2.0 / 1024)
    assert abs(unit.kernel.data.std() / expected - 1) < 0.1


def test_every_parameter_gets_finite_gradient(rng):
    model = build_model(mini_spec("L"), 0)
    x = rng.normal(size=(4, 8, 200))
    loss, _ = model.loss(x, np.array([0, 1, 0, 1]), seed=0)
    backward(loss, model.parameters())
    for name, p in model.named_parameters():
        assert p.grad is not None and np.all(np.isfinite(p.grad)), name
        if name.endswith("kernel") or name.endswith("weight"):
            assert np.any(p.grad != 0), name
