import math
import os
import sys

import numpy as np
import pytest
import torch
from torch import nn

from rootsr.burst import BurstSample
from rootsr.network import (
    MIDRCT,
    ConfigError,
    DenseResidualExtractor,
    DenseResidualGroup,
    NetworkConfig,
    enhance_batch,
    forward,
    fusion_param_count,
    pixel_shuffle,
)

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "data"))
from make_golden import GOLDEN_CFG, golden_input  # noqa: E402

TOY = NetworkConfig(embed_dim=8, rdg_count=1, blocks_per_group=2, growth=4)


def zero_(module: nn.Module) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def test_config_invariants():
    for bad in (dict(n_frames=2), dict(n_frames=4), dict(embed_dim=3), dict(scale=3), dict(rdg_count=0)):
        with pytest.raises(ValueError):
            NetworkConfig(**bad)


def test_shallow_zero_weights_gives_bias():
    m = MIDRCT(TOY)
    with torch.no_grad():
        m.shallow.weight.zero_()
        m.shallow.bias.copy_(torch.arange(8.0))
    out = m.shallow_extract(torch.rand(2, 3, 3, 7, 5))
    assert out.shape == (2, 3, 8, 7, 5)
    assert torch.equal(out, torch.arange(8.0).view(1, 1, 8, 1, 1).expand_as(out))


def test_shallow_weights_shared_across_frames():
    m = MIDRCT(TOY)
    frame = torch.rand(3, 6, 6)
    out = m.shallow_extract(torch.stack([frame, frame, frame])[None])
    assert torch.equal(out[0, 0], out[0, 1]) and torch.equal(out[0, 1], out[0, 2])
    assert len(list(m.shallow.parameters())) == 2


def test_fusion_dims():
    m = MIDRCT(NetworkConfig(n_frames=3, embed_dim=16))
    assert m.fusion.in_channels == 48 and m.fusion.out_channels == 16
    out = m.fuse_features(torch.rand(1, 3, 16, 10, 9), align_enabled=False)
    assert out.shape == (1, 16, 10, 9)
    with pytest.raises(ValueError):
        m.fuse_features(torch.rand(1, 2, 16, 10, 9))


@pytest.mark.parametrize("align", [False, True])
def test_fusion_averaging_of_identical_maps(align):
    f = 8
    m = MIDRCT(TOY)
    with torch.no_grad():
        m.fusion.weight.zero_()
        m.fusion.bias.zero_()
        for i in range(3):
            for c in range(f):
                m.fusion.weight[c, i * f + c, 1, 1] = 1 / 3
    feat = m.shallow_extract(torch.rand(1, 1, 3, 16, 12))[:, 0]
    out = m.fuse_features(torch.stack([feat] * 3, dim=1), align_enabled=align)
    assert (out - feat).abs().max() <= 1e-6


def test_fusion_param_count_linear_in_frames():
    for n in (3, 5, 7):
        cfg = NetworkConfig(n_frames=n, embed_dim=12)
        m = MIDRCT(cfg)
        assert sum(p.numel() for p in m.fusion.parameters()) == fusion_param_count(cfg) == 9 * n * 12 * 12 + 12


def test_alignment_fallback_on_flat_features():
    m = MIDRCT(TOY)
    shifts = m.estimate_shifts(torch.ones(2, 3, 8, 8, 8))
    assert shifts == [[0.0, 0.0, 0.0]] * 2
    assert m.fallbacks == 4


def test_warp_shift_is_constant_in_graph():
    m = MIDRCT(TOY)
    frames = torch.rand(1, 3, 3, 16, 16, requires_grad=True)
    out = m(frames)
    out.sum().backward()
    assert frames.grad is not None
    # the only leaves of the graph are the input and the module parameters
    leaves, seen, stack = set(), set(), [out.grad_fn]
    while stack:
        fn = stack.pop()
        if fn is None or fn in seen:
            continue
        seen.add(fn)
        if hasattr(fn, "variable"):
            leaves.add(id(fn.variable))
        stack.extend(nxt for nxt, _ in fn.next_functions)
    assert leaves == {id(frames)} | {id(p) for p in m.parameters()}


def test_deep_zero_weights_is_identity():
    deep = DenseResidualExtractor(8, 2, 3, 4)
    zero_(deep)
    x = torch.randn(2, 8, 5, 7)
    assert torch.equal(deep(x), x)


@pytest.mark.parametrize("hw", [(1, 1), (5, 9), (16, 16)])
def test_deep_preserves_dims(hw):
    x = torch.randn(1, 8, *hw)
    assert DenseResidualExtractor(8, 2, 2, 4)(x).shape == x.shape


def test_dense_block_hand_computed():
    g = DenseResidualGroup(channels=1, growth=1, n_blocks=1)
    with torch.no_grad():
        conv = g.blocks[0]
        conv.weight.zero_()
        conv.weight[0, 0, 1, 1] = 2.0  # centre tap only, so a 1x1 kernel
        conv.bias.fill_(-1.0)
        g.compress.weight.copy_(torch.tensor([0.5, 3.0]).view(1, 2, 1, 1))
        g.compress.bias.fill_(0.25)
    x = [[1.0, -2.0], [3.0, 0.5]]

    def gelu(z):
        return 0.5 * z * (1 + math.erf(z / math.sqrt(2)))

    want = [[v + 0.5 * v + 3.0 * gelu(2 * v - 1) + 0.25 for v in row] for row in x]
    got = g(torch.tensor(x).view(1, 1, 2, 2))[0, 0]
    assert torch.allclose(got, torch.tensor(want), atol=1e-6)


def test_pixel_shuffle_order():
    x = torch.tensor([10.0, 20.0, 30.0, 40.0]).view(1, 4, 1, 1)
    assert pixel_shuffle(x).view(2, 2).tolist() == [[10, 20], [30, 40]]
    y = torch.arange(12.0).view(1, 12, 1, 1)
    out = pixel_shuffle(y)
    for c in range(3):
        assert out[0, c].flatten().tolist() == [4.0 * c + k for k in range(4)]


def test_reconstruct_zero_weights_constant_bias():
    m = MIDRCT(TOY)
    zero_(m.recon_fuse)
    zero_(m.recon_out)
    with torch.no_grad():
        m.recon_out.bias.copy_(torch.tensor([0.1] * 4 + [0.2] * 4 + [0.3] * 4))
    s = torch.randn(1, 8, 5, 6)
    out = m.reconstruct(s, s)
    assert out.shape == (1, 3, 10, 12)
    for c, v in enumerate((0.1, 0.2, 0.3)):
        assert torch.allclose(out[0, c], torch.full((10, 12), v))
    with pytest.raises(ValueError):
        m.reconstruct(s, s[:, :, :4])


def test_forward_zero_deep_branch_equals_shallow_skip_path():
    m = MIDRCT(TOY)
    zero_(m.deep)
    x = torch.rand(1, 3, 3, 8, 8)
    shallow = m.fuse_features(m.shallow_extract(x))
    assert torch.equal(m(x), m.reconstruct(shallow, shallow))


def sample(h=64, w=64, n=3, seed=0):
    rng = np.random.default_rng(seed)
    return BurstSample(frames=[rng.random((h, w, 3)) for _ in range(n)])


def test_forward_64_to_128_clamped():
    out = forward(sample(), TOY, MIDRCT(TOY))
    assert out.shape == (128, 128, 3)
    assert out.min() >= 0 and out.max() <= 1


@pytest.mark.parametrize("hw", [(9, 13), (32, 20)])
def test_forward_any_size(hw):
    assert forward(sample(*hw), TOY, MIDRCT(TOY)).shape == (2 * hw[0], 2 * hw[1], 3)


def test_forward_frame_count_mismatch():
    with pytest.raises(ConfigError):
        forward(sample(n=5), TOY, MIDRCT(TOY))
    with pytest.raises(ValueError):
        MIDRCT(TOY)(torch.rand(1, 5, 3, 8, 8))


def test_enhance_batch_matches_single():
    m = MIDRCT(TOY)
    samples = [sample(16, 16, seed=s) for s in range(3)]
    batched = enhance_batch(m, samples, batch_size=2)
    for s, b in zip(samples, batched):
        assert np.allclose(forward(s, TOY, m), b, atol=1e-6)


def test_init_is_seeded():
    a, b = MIDRCT(TOY), MIDRCT(TOY)
    c = MIDRCT(NetworkConfig(**{**TOY.__dict__, "seed": 1}))
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    assert not torch.equal(a.shallow.weight, c.shallow.weight)


def test_identical_frames_match_tripled_single_image_path():
    cfg = NetworkConfig(**GOLDEN_CFG)
    m = MIDRCT(cfg).eval()
    x = golden_input()
    with torch.no_grad():
        single = m.shallow(x[:, 0])
        fused = m.fusion(torch.cat([single] * 3, dim=1))
        ref = m.reconstruct(fused, m.deep(fused))
        assert torch.allclose(m(x), ref, atol=1e-6)


def test_identical_frames_golden_activation():
    golden = np.load(os.path.join(os.path.dirname(__file__), "data", "golden_forward.npz"))["output"]
    m = MIDRCT(NetworkConfig(**GOLDEN_CFG)).eval()
    with torch.no_grad():
        out = m(golden_input())[0].numpy()
    assert out.shape == golden.shape == (3, 24, 20)
    assert np.allclose(out, golden, atol=1e-5)
