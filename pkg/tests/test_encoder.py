import pytest
import torch

from spliceloc.encoder import (
    FeaturePyramid,
    HierarchicalEncoder,
    expect_tag,
    validate_image_batch,
)

from conftest import fd_grad, rel_err


def small_encoder(mixer="attention", domain="rgb"):
    return HierarchicalEncoder(dims=(8, 16, 32, 64), depths=(1, 1, 1, 1),
                               heads=(1, 2, 4, 8), sr_ratios=(8, 4, 2, 1),
                               mixer=mixer, mlp_ratio=1.0, domain_tag=domain)


class TestScaleChannelContract:
    def test_default_config_shapes_at_256(self):
        enc = HierarchicalEncoder(domain_tag="rgb")
        out = enc(torch.rand(2, 3, 256, 256))
        assert [tuple(t.shape) for t in out.levels] == [
            (2, 32, 128, 128), (2, 64, 64, 64), (2, 160, 32, 32), (2, 256, 16, 16)
        ]
        assert out.domain_tag == "rgb"

    def test_default_config_shapes_at_64(self):
        enc = HierarchicalEncoder(domain_tag="noise")
        out = enc(torch.rand(1, 3, 64, 64))
        assert [tuple(t.shape) for t in out.levels] == [
            (1, 32, 32, 32), (1, 64, 16, 16), (1, 160, 8, 8), (1, 256, 4, 4)
        ]

    def test_non_square_input(self):
        out = small_encoder()(torch.rand(2, 3, 64, 96))
        assert [t.shape[-2:] for t in out.levels] == [
            torch.Size([32, 48]), torch.Size([16, 24]),
            torch.Size([8, 12]), torch.Size([4, 6]),
        ]

    @pytest.mark.parametrize("mixer", ["attention", "conv"])
    def test_mixer_variants_keep_contract(self, mixer):
        out = small_encoder(mixer)(torch.rand(1, 3, 48, 48))
        assert [t.shape[1] for t in out.levels] == [8, 16, 32, 64]
        assert [t.shape[-1] for t in out.levels] == [24, 12, 6, 3]

    def test_indivisible_size_rejected(self):
        with pytest.raises(ValueError, match="divisible by 16"):
            small_encoder()(torch.rand(1, 3, 50, 64))

    def test_nan_input_rejected_by_batch_validation(self):
        x = torch.rand(1, 3, 32, 32)
        x[0, 0, 0, 0] = float("nan")
        with pytest.raises(ValueError, match="NaN"):
            validate_image_batch(x)


class TestDeterminismAndIsolation:
    def test_repeat_forward_bitwise_identical(self):
        enc = small_encoder().eval()
        x = torch.rand(2, 3, 48, 48)
        with torch.no_grad():
            a = enc(x)
            b = enc(x)
        for ta, tb in zip(a.levels, b.levels):
            assert torch.equal(ta, tb)

    @pytest.mark.parametrize("mixer", ["attention", "conv"])
    def test_batch_elements_do_not_mix(self, mixer):
        enc = small_encoder(mixer).eval()
        x = torch.rand(2, 3, 48, 48)
        y = x.clone()
        y[1] += 0.3
        with torch.no_grad():
            a = enc(x)
            b = enc(y)
        for ta, tb in zip(a.levels, b.levels):
            assert torch.equal(ta[0], tb[0])
            assert not torch.equal(ta[1], tb[1])


class TestDifferentiability:
    def test_input_gradient_matches_finite_difference(self):
        enc = small_encoder().double().eval()
        x = torch.rand(1, 3, 32, 32, dtype=torch.float64).requires_grad_(True)
        # weighted scalar readout over the coarsest level
        w = torch.randn(64, 2, 2, dtype=torch.float64)

        def readout():
            return (enc(x).levels[3] * w).sum()

        readout().backward()
        idx = (0, 1, 7, 11)
        num = fd_grad(readout, x.data, idx, eps=1e-6)
        assert rel_err(num, x.grad[idx].item()) <= 1e-3

    def test_weight_gradients_flow_to_all_stages(self):
        enc = small_encoder()
        out = enc(torch.rand(1, 3, 48, 48))
        sum(t.sum() for t in out.levels).backward()
        for i, stage in enumerate(enc.stages):
            gnorm = sum(p.grad.abs().sum() for p in stage.parameters() if p.grad is not None)
            assert float(gnorm) > 0.0, f"stage {i} received no gradient"


class TestFeaturePyramidType:
    def test_requires_four_levels(self):
        with pytest.raises(ValueError, match="4 levels"):
            FeaturePyramid((torch.zeros(1, 8, 4, 4),) * 3, "rgb")

    def test_tag_validation(self):
        p = FeaturePyramid((torch.zeros(1, 8, 4, 4),) * 4, "rgb")
        expect_tag(p, "rgb", "noise")
        with pytest.raises(ValueError, match="expected pyramid tagged"):
            expect_tag(p, "fused_scale")
        with pytest.raises(ValueError, match="unknown domain tag"):
            FeaturePyramid((torch.zeros(1, 8, 4, 4),) * 4, "bogus")
