import numpy as np
import pytest
import torch

from spliceloc.noise import (
    SRM_TRUNCATION,
    ConstrainedHighPass,
    NoiseExtractor,
    SrmResidual,
    srm_weight,
)


def brute_force_conv3x3_reflect(img: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Direct nested-loop multi-channel correlation with reflect padding."""
    c_out, c_in, _, _ = weight.shape
    h, w = img.shape[1:]
    pad = np.stack([np.pad(img[c], 1, mode="reflect") for c in range(c_in)])
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for i in range(c_in):
                    for dy in range(3):
                        for dx in range(3):
                            acc += weight[o, i, dy, dx] * pad[i, y + dy, x + dx]
                out[o, y, x] = acc
    return out


class TestSrmFixed:
    def test_constant_image_zero_residual(self):
        x = torch.full((2, 3, 16, 16), 0.43)
        out = SrmResidual()(x)
        assert torch.equal(out, torch.zeros_like(out))

    def test_impulse_matches_bruteforce_correlation(self):
        rng = np.random.default_rng(0)
        img = np.full((3, 8, 8), 0.5)
        img[:, 4, 3] += 0.2  # impulse on flat background
        img += rng.normal(0, 0.0, img.shape)
        weight = srm_weight(torch.float64).numpy()
        oracle = np.clip(
            brute_force_conv3x3_reflect(img, weight), -SRM_TRUNCATION, SRM_TRUNCATION
        )
        out = SrmResidual()(torch.tensor(img, dtype=torch.float64).unsqueeze(0))
        assert np.abs(out[0].numpy() - oracle).max() <= 1e-6

    def test_random_image_matches_bruteforce(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (3, 8, 8))
        weight = srm_weight(torch.float64).numpy()
        oracle = np.clip(
            brute_force_conv3x3_reflect(img, weight), -SRM_TRUNCATION, SRM_TRUNCATION
        )
        out = SrmResidual()(torch.tensor(img, dtype=torch.float64).unsqueeze(0))
        assert np.abs(out[0].numpy() - oracle).max() <= 1e-6

    def test_truncation_bound(self):
        out = SrmResidual()(torch.rand(1, 3, 32, 32))
        assert out.abs().max() <= SRM_TRUNCATION + 1e-7

    def test_weight_free(self):
        assert list(SrmResidual().parameters()) == []

    def test_batch_concat_commutes(self):
        a, b = torch.rand(2, 3, 16, 16), torch.rand(3, 3, 16, 16)
        mod = SrmResidual()
        joint = mod(torch.cat([a, b]))
        assert torch.equal(joint, torch.cat([mod(a), mod(b)]))


class TestConstrainedHighPass:
    def test_projection_after_optimizer_step(self):
        torch.manual_seed(3)
        mod = ConstrainedHighPass()
        opt = torch.optim.SGD(mod.parameters(), lr=0.1)
        out = mod(torch.rand(2, 3, 16, 16))
        out.square().mean().backward()
        opt.step()
        mod.project()
        w = mod.weight.detach()
        assert torch.allclose(w[:, :, 1, 1], torch.full((3, 3), -1.0), atol=1e-6)
        off_sum = w.sum(dim=(2, 3)) - w[:, :, 1, 1]
        assert torch.allclose(off_sum, torch.ones(3, 3), atol=1e-6)

    def test_initial_kernel_already_projected(self):
        w = ConstrainedHighPass().weight.detach()
        assert torch.allclose(w[:, :, 1, 1], torch.full((3, 3), -1.0), atol=1e-6)
        assert torch.allclose(w.sum(dim=(2, 3)), torch.zeros(3, 3), atol=1e-6)

    def test_constant_image_zero_residual(self):
        out = ConstrainedHighPass()(torch.full((1, 3, 12, 12), 0.7))
        assert out.abs().max() <= 1e-6


class TestNoiseExtractor:
    def test_mode_dispatch_and_shape(self):
        x = torch.rand(2, 3, 32, 32)
        for mode in ("srm_fixed", "learned_highpass"):
            out = NoiseExtractor(mode)(x)
            assert out.shape == x.shape

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="unknown noise mode"):
            NoiseExtractor("magic")

    def test_srm_identical_outputs_across_training(self):
        mod = NoiseExtractor("srm_fixed")
        x = torch.rand(1, 3, 16, 16)
        before = mod(x)
        mod.project()  # no-op for the fixed bank
        assert torch.equal(mod(x), before)

    def test_wrong_channel_count_rejected(self):
        with pytest.raises(ValueError, match="expected"):
            NoiseExtractor()(torch.rand(1, 1, 16, 16))
