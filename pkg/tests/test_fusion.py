import numpy as np
import pytest
import torch
import torch.nn.functional as F

from spliceloc.encoder import FeaturePyramid
from spliceloc.fusion import CondConv2d, CrossDomainFusion, CrossScaleFusion

from conftest import fd_grad, rel_err

DIMS = (32, 64, 160, 256)


def pyramid(tag="rgb", dims=DIMS, base=16, batch=2, fill=None):
    levels = []
    for i, c in enumerate(dims):
        size = base // (2 ** i)
        t = torch.full((batch, c, size, size), fill) if fill is not None \
            else torch.rand(batch, c, size, size)
        levels.append(t)
    return FeaturePyramid(tuple(levels), tag)


class TestCrossScaleFusion:
    def test_concat_widths_follow_neighbor_rule(self):
        csf = CrossScaleFusion(DIMS)
        assert [m.in_channels for m in csf.reduce] == [96, 256, 480, 416]
        assert [m.out_channels for m in csf.reduce] == list(DIMS)

    def test_output_shapes_equal_input_shapes(self):
        csf = CrossScaleFusion(DIMS)
        p = pyramid("rgb")
        out = csf(p)
        assert out.domain_tag == "fused_scale"
        for a, b in zip(out.levels, p.levels):
            assert a.shape == b.shape

    def test_zero_input_gives_zero_output_in_eval(self):
        csf = CrossScaleFusion(DIMS).eval()
        out = csf(pyramid("noise", fill=0.0))
        for t in out.levels:
            assert torch.equal(t, torch.zeros_like(t))

    def test_wrong_tag_rejected(self):
        csf = CrossScaleFusion(DIMS)
        with pytest.raises(ValueError, match="expected pyramid tagged"):
            csf(pyramid("fused_scale"))

    def test_reduced_fused_widths(self):
        csf = CrossScaleFusion(DIMS, out_dims=(16, 16, 16, 16))
        out = csf(pyramid("rgb"))
        assert out.channels() == (16, 16, 16, 16)


class TestCondConv:
    def test_single_expert_equals_plain_convolution(self):
        torch.manual_seed(1)
        cc = CondConv2d(8, 8, 3, num_experts=1)
        x = torch.rand(3, 8, 10, 10)
        # sigmoid routing weight is not 1, so force routing to exactly 1
        ones = torch.ones(3, 1)
        got = cc(x, routing=ones)
        want = F.conv2d(x, cc.experts[0], cc.expert_bias[0], padding=1)
        assert (got - want).abs().max() <= 1e-5

    def test_uniform_routing_equals_averaged_kernel(self):
        torch.manual_seed(2)
        k = 4
        cc = CondConv2d(6, 6, 3, num_experts=k)
        x = torch.rand(2, 6, 9, 9)
        uniform = torch.full((2, k), 1.0 / k)
        got = cc(x, routing=uniform)
        want = F.conv2d(x, cc.experts.mean(0), cc.expert_bias.mean(0), padding=1)
        assert (got - want).abs().max() <= 1e-5

    def test_routing_is_per_batch_element(self):
        torch.manual_seed(3)
        cc = CondConv2d(4, 4, 3, num_experts=2)
        a = torch.rand(1, 4, 8, 8)
        b = torch.rand(1, 4, 8, 8) * 3.0
        r = cc.routing_weights(torch.cat([a, b]))
        assert not torch.allclose(r[0], r[1])
        # duplicating one sample yields identical per-copy outputs
        dup = torch.cat([a, a])
        out = cc(dup)
        assert torch.equal(out[0], out[1])

    def test_router_gradient_matches_finite_difference(self):
        torch.manual_seed(4)
        cc = CondConv2d(8, 8, 3, num_experts=2).double()
        x = torch.rand(1, 8, 4, 4, dtype=torch.float64)

        def loss():
            return cc(x).square().sum()

        loss().backward()
        for idx in [(0, 0), (1, 3)]:
            num = fd_grad(loss, cc.router.weight.data, idx, eps=1e-6)
            assert rel_err(num, cc.router.weight.grad[idx].item()) <= 1e-3

    def test_expert_count_validated(self):
        with pytest.raises(ValueError, match="num_experts"):
            CondConv2d(4, 4, num_experts=0)


class TestCrossDomainFusion:
    def test_contract_shapes(self):
        cdf = CrossDomainFusion(DIMS, num_experts=2)
        a = pyramid("fused_scale")
        b = pyramid("fused_scale")
        out = cdf(a, b)
        assert out.domain_tag == "fused_domain"
        assert out.levels[3].shape == (2, 256, 2, 2)
        for lvl, src in zip(out.levels, a.levels):
            assert lvl.shape == src.shape

    def test_tag_and_shape_mismatch_rejected(self):
        cdf = CrossDomainFusion(DIMS, num_experts=2)
        with pytest.raises(ValueError, match="expected pyramid tagged"):
            cdf(pyramid("rgb"), pyramid("fused_scale"))
        small = pyramid("fused_scale", base=8)
        with pytest.raises(ValueError, match="shape mismatch"):
            cdf(pyramid("fused_scale"), small)

    def test_level4_paper_scale_shape(self):
        cdf = CrossDomainFusion(DIMS, num_experts=2)
        a = pyramid("fused_scale", base=128, batch=1)
        out = cdf(a, pyramid("fused_scale", base=128, batch=1))
        assert out.levels[3].shape == (1, 256, 16, 16)


class TestFusedGradientFlow:
    def test_gradients_reach_both_branches(self):
        dims = (8, 16, 32, 64)
        csf_a, csf_b = CrossScaleFusion(dims), CrossScaleFusion(dims)
        cdf = CrossDomainFusion(dims, num_experts=2)
        pa = pyramid("rgb", dims=dims, base=16, batch=1)
        pb = pyramid("noise", dims=dims, base=16, batch=1)
        for t in pa.levels + pb.levels:
            t.requires_grad_(True)
        out = cdf(csf_a(pa), csf_b(pb))
        sum(t.sum() for t in out.levels).backward()
        for t in pa.levels + pb.levels:
            assert t.grad is not None and float(t.grad.abs().sum()) > 0.0
