import dataclasses

import numpy as np
import pytest
import torch
from oracles import adam_reference, gradcheck_rel_err

from echoforge.config import ModelConfig
from echoforge.net import (
    AdamState,
    MosraNet,
    Normalizer,
    ShapeError,
    adam_step,
    flop_count,
    loss,
    loss_terms,
    parameter_count,
    single_channel_config,
)
from echoforge.net.model import EncoderBlock, MultiHeadAttention, SegmentCNN, positional_encoding

TINY = ModelConfig(cnn_channels=(3, 4, 4), d_model=8, n_layers=1, n_heads=2, d_ff=12, head_hidden=6)


def seeded(module, seed=0):
    torch.manual_seed(seed)
    return module.double()


def test_output_shape():
    model = MosraNet()
    out = model(torch.randn(2, 5, 247, 48, 15))
    assert out.shape == (2, 5, 5)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        MosraNet()(torch.randn(1, 4, 3, 48, 15))


def test_parameter_count_in_range():
    n = parameter_count(MosraNet())
    assert 300_000 <= n <= 550_000
    assert n == 381_273


def test_identical_kernels_give_identical_channels():
    torch.manual_seed(0)
    model = MosraNet().eval()
    with torch.no_grad():
        w = model.cnn.convs[0].weight
        w[:] = w[:, :1].expand_as(w).clone()
    # with equal kernels the first conv sums channels with equal weights,
    # so permuting input channels cannot change the output
    x = torch.randn(1, 5, 6, 48, 15)
    with torch.no_grad():
        assert torch.allclose(model(x), model(x[:, [3, 1, 4, 0, 2]]), atol=1e-5)


def test_duplicated_channel_gives_identical_predictions():
    # weight-sharing construction: equal first-conv kernels and equal output rows per head
    torch.manual_seed(0)
    model = MosraNet().eval()
    with torch.no_grad():
        w = model.cnn.convs[0].weight
        w[:] = w[:, :1].expand_as(w).clone()
        for head in model.heads:
            last = head[-1]
            last.weight[:] = last.weight[:1].expand_as(last.weight).clone()
            last.bias[:] = last.bias[0]
        x = torch.randn(2, 1, 6, 48, 15).expand(2, 5, 6, 48, 15).contiguous()
        out = model(x)
    assert torch.equal(out, out[:, :, :1].expand_as(out))


def test_single_channel_config():
    cfg = single_channel_config()
    assert cfg.in_channels == 1 and cfg.n_outputs == 1
    assert MosraNet(cfg)(torch.randn(3, 1, 4, 48, 15)).shape == (3, 5, 1)


def test_positional_encoding_values():
    pe = positional_encoding(4, 8, torch.float64)
    assert pe[0, 0] == 0 and pe[0, 1] == 1
    assert pe[1, 0].item() == pytest.approx(np.sin(1.0))
    assert pe[1, 2].item() == pytest.approx(np.sin(1.0 / 10000 ** (2 / 8)))


# gradient checks (64-bit, central differences)

def test_gradcheck_square():
    x = torch.tensor(3.0, dtype=torch.float64, requires_grad=True)
    (x**2).backward()
    assert x.grad.item() == 6.0


def test_gradcheck_linear_and_layernorm():
    torch.manual_seed(1)
    lin = torch.nn.Linear(5, 4).double()
    ln = torch.nn.LayerNorm(4).double()
    x = torch.randn(3, 5, dtype=torch.float64, requires_grad=True)
    with torch.no_grad():
        ln.weight.normal_()
        ln.bias.normal_()
    fn = lambda: (ln(lin(x)) ** 2).sum()  # noqa: E731
    assert gradcheck_rel_err(fn, [x, *lin.parameters(), *ln.parameters()]) < 1e-4


def test_gradcheck_segment_cnn():
    cnn = seeded(SegmentCNN(dataclasses.replace(TINY, in_channels=2, n_bands=8, segment_frames=8)))
    x = torch.randn(2, 2, 8, 8, dtype=torch.float64, requires_grad=True)
    fn = lambda: (cnn(x) ** 2).sum()  # noqa: E731
    assert gradcheck_rel_err(fn, [x, *cnn.parameters()]) < 1e-4


def test_gradcheck_attention():
    att = seeded(MultiHeadAttention(8, 2))
    x = torch.randn(2, 5, 8, dtype=torch.float64, requires_grad=True)
    fn = lambda: (att(x) ** 2).sum()  # noqa: E731
    assert gradcheck_rel_err(fn, [x, *att.parameters()]) < 1e-4


def test_gradcheck_encoder_block():
    blk = seeded(EncoderBlock(8, 2, 12))
    x = torch.randn(2, 5, 8, dtype=torch.float64, requires_grad=True)
    fn = lambda: (blk(x) ** 2).sum()  # noqa: E731
    assert gradcheck_rel_err(fn, [x, *blk.parameters()]) < 1e-4


def test_gradcheck_loss():
    pred = torch.randn(3, 5, 5, dtype=torch.float64, requires_grad=True)
    target = torch.randn(3, 5, 5, dtype=torch.float64)
    assert gradcheck_rel_err(lambda: loss(pred, target), [pred]) < 1e-4


def test_gradcheck_full_model():
    cfg = dataclasses.replace(TINY, n_bands=8, segment_frames=8)
    model = seeded(MosraNet(cfg), 3)
    x = torch.randn(2, 5, 3, 8, 8, dtype=torch.float64, requires_grad=True)
    target = torch.randn(2, 5, 5, dtype=torch.float64)
    fn = lambda: loss(model(x), target)  # noqa: E731
    assert gradcheck_rel_err(fn, [x, *model.parameters()]) < 1e-4


def test_mean_pool_gradient_is_uniform():
    z = torch.randn(1, 4, 3, dtype=torch.float64, requires_grad=True)
    z.mean(dim=1).sum().backward()
    assert torch.allclose(z.grad, torch.full_like(z, 0.25))


def test_backward_on_detached_graph_errors():
    x = torch.tensor(2.0)
    with pytest.raises(RuntimeError):
        (x * 3).backward()


# loss arithmetic

def test_loss_zero_and_hand_case():
    y = torch.randn(4, 5, 5)
    assert loss(y, y).item() == 0.0
    ones = torch.ones(4, 5, 5, dtype=torch.float64)
    assert loss(ones, torch.zeros_like(ones)).item() == pytest.approx(2.8, abs=1e-12)


def test_loss_mos_term_quadratic():
    target = torch.zeros(2, 5, 5, dtype=torch.float64)
    pred = torch.zeros_like(target)
    pred[:, 0] = 1.0
    pred[:, 2] = 1.0
    base = loss_terms(pred, target)
    pred2 = pred.clone()
    pred2[:, 0] = 2.0
    scaled = loss_terms(pred2, target)
    assert scaled[0] == pytest.approx(4 * base[0])
    assert torch.equal(scaled[1:], base[1:])
    with pytest.raises(ShapeError):
        loss(pred, target[:, :, :1])


def test_normalizer_roundtrip():
    labels = np.random.default_rng(0).normal(size=(10, 5, 5)) * [1, 0.2, 0.3, 5, 7] + [3, 0.5, 0.4, 0, 10]
    norm = Normalizer.fit(labels)
    back = norm.denormalize(norm.normalize(labels))
    assert np.allclose(back, labels, rtol=1e-6)
    z = norm.normalize(labels).reshape(-1, 5)
    assert np.allclose(z.mean(axis=0), 0, atol=1e-12) and np.allclose(z.std(axis=0), 1)
    assert Normalizer.from_dict(norm.to_dict()).mean.tolist() == norm.mean.tolist()
    with pytest.raises(ValueError):
        Normalizer([0] * 5, [1, 1, 0, 1, 1])


# Adam

def test_adam_first_step():
    p = torch.zeros(1, dtype=torch.float64)
    adam_step([p], [torch.ones(1, dtype=torch.float64)], AdamState(), 1e-3)
    assert p.item() == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_matches_reference_and_torch():
    gs = [0.3, -1.2, 0.5, 2.0, -0.1]
    p = torch.zeros(1, dtype=torch.float64)
    state = AdamState()
    for g in gs:
        adam_step([p], [torch.tensor([g], dtype=torch.float64)], state, 0.01)
    assert p.item() == pytest.approx(adam_reference(gs, 0.01), rel=1e-12)
    q = torch.zeros(1, dtype=torch.float64, requires_grad=True)
    opt = torch.optim.Adam([q], lr=0.01)
    for g in gs:
        q.grad = torch.tensor([g], dtype=torch.float64)
        opt.step()
    assert p.item() == pytest.approx(q.item(), rel=1e-10)


def test_adam_zero_and_equal_gradients():
    p = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)
    before = p.clone()
    adam_step([p], [torch.tensor([0.0, 0.5, 0.5], dtype=torch.float64)], AdamState(), 0.1)
    d = p - before
    assert d[0] == 0.0
    assert d[1] == d[2]


# compute

def test_flops_multi_vs_single():
    multi = flop_count(ModelConfig(), 247)["total"]
    single = flop_count(single_channel_config(), 247)["total"]
    assert multi <= 1.3 * single
    assert 5 * single / multi >= 3.8


def test_flops_scaling():
    a = flop_count(n_segments=100)
    b = flop_count(n_segments=200)
    assert b["cnn"] == 2 * a["cnn"]
    assert b["transformer_linear"] == 2 * a["transformer_linear"]
    assert b["attention"] == 4 * a["attention"]
    zero = flop_count(dataclasses.replace(ModelConfig(), n_layers=0))
    assert zero["transformer_linear"] == 0 and zero["attention"] == 0


def test_flops_match_conv_hand_count():
    cfg = ModelConfig()
    f = flop_count(cfg, 1)
    conv = 16 * 5 * 9 * 48 * 15 + 32 * 16 * 9 * 24 * 7 + 64 * 32 * 9 * 12 * 3
    assert f["cnn"] == conv + 384 * 128
