import numpy as np
import pytest

from spliceloc.data import (
    AttackSpec,
    DegenerateRegionError,
    RegionSpec,
    Sample,
    apply_attack,
    generate_splice,
    load_corpus,
    random_texture,
    rasterize_region,
    save_sample,
    synthesize_corpus,
)


def gray(h, w, value=0.5):
    return np.full((h, w, 3), value, dtype=np.float32)


class TestGenerateSplice:
    def test_centered_square_area(self):
        region = RegionSpec("rect", center=(128, 128), size=(64, 64))
        sample = generate_splice(gray(256, 256, 0.5), gray(256, 256, 1.0), region)
        assert int(sample.gt_mask.sum()) == 64 * 64
        assert sample.image.shape == (256, 256, 3)

    def test_host_pixels_untouched_without_feather(self):
        host = random_texture(128, 128, 3)
        donor = random_texture(128, 128, 4)
        region = RegionSpec("ellipse", center=(60, 70), size=(25, 30))
        sample = generate_splice(host, donor, region)
        outside = sample.gt_mask == 0
        assert np.array_equal(sample.image[outside], host[outside])
        inside = sample.gt_mask == 1
        assert np.array_equal(sample.image[inside], np.clip(donor, 0, 1)[inside])

    def test_feather_blends_image_but_not_mask(self):
        host = gray(128, 128, 0.2)
        donor = gray(128, 128, 0.9)
        region = RegionSpec("rect", center=(64, 64), size=(48, 48))
        hard = generate_splice(host, donor, region)
        soft = generate_splice(host, donor, region, feather=2.0)
        assert np.array_equal(hard.gt_mask, soft.gt_mask)
        assert not np.array_equal(hard.image, soft.image)

    def test_determinism_byte_identical(self):
        host = random_texture(96, 96, 1)
        donor = random_texture(96, 96, 2)
        region = RegionSpec("rect", center=(48, 48), size=(30, 40))
        a = generate_splice(host, donor, region, seed=5)
        b = generate_splice(host, donor, region, seed=5)
        assert a.image.tobytes() == b.image.tobytes()
        assert a.gt_mask.tobytes() == b.gt_mask.tobytes()

    def test_ellipse_area_matches_bruteforce(self):
        h = w = 256
        ay, ax = 25.0, 40.0
        cy, cx = 120.0, 130.0
        region = RegionSpec("ellipse", center=(cy, cx), size=(ay, ax))
        sample = generate_splice(random_texture(h, w, 7), random_texture(h, w, 8), region)
        # brute-force point-in-ellipse rasterizer
        count = 0
        oracle = np.zeros((h, w), dtype=np.uint8)
        for y in range(h):
            for x in range(w):
                if ((y - cy) / ay) ** 2 + ((x - cx) / ax) ** 2 <= 1.0:
                    oracle[y, x] = 1
                    count += 1
        assert np.array_equal(sample.gt_mask, oracle)
        assert abs(count - np.pi * ay * ax) / (np.pi * ay * ax) < 0.02
        assert int(sample.gt_mask.sum()) == count

    def test_degenerate_region_rejected(self):
        region = RegionSpec("rect", center=(-500, -500), size=(10, 10))
        with pytest.raises(DegenerateRegionError, match="empty after clipping"):
            generate_splice(gray(64, 64), gray(64, 64, 1.0), region)

    def test_region_fraction_bounds(self):
        too_big = RegionSpec("rect", center=(32, 32), size=(64, 64))
        with pytest.raises(ValueError, match="area fraction"):
            generate_splice(gray(64, 64), gray(64, 64, 1.0), too_big)
        too_small = RegionSpec("rect", center=(32, 32), size=(1, 1))
        with pytest.raises(ValueError, match="area fraction"):
            generate_splice(gray(64, 64), gray(64, 64, 1.0), too_small)

    def test_donor_resampled_to_host_size(self):
        region = RegionSpec("rect", center=(32, 32), size=(20, 20))
        sample = generate_splice(gray(64, 64), gray(128, 96, 1.0), region)
        assert sample.image.shape == (64, 64, 3)

    def test_polygon_region(self):
        region = RegionSpec("polygon", vertices=((10, 10), (10, 50), (50, 50), (50, 10)))
        sample = generate_splice(gray(96, 96), gray(96, 96, 1.0), region)
        assert 0.01 <= sample.gt_mask.mean() <= 0.5


class TestApplyAttack:
    def test_none_is_identity(self):
        sample = synthesize_corpus(1, 64, 0)[0]
        out = apply_attack(sample, AttackSpec("none"))
        assert np.array_equal(out.image, sample.image)
        assert np.array_equal(out.gt_mask, sample.gt_mask)
        assert out.meta == sample.meta

    def test_resize_floor_shapes(self):
        sample = synthesize_corpus(1, 256, 1)[0]
        out = apply_attack(sample, AttackSpec("resize", resize_ratio=0.9))
        assert out.image.shape == (230, 230, 3)
        assert out.gt_mask.shape == (230, 230)
        assert set(np.unique(out.gt_mask)) <= {0, 1}

    def test_zero_variance_identity(self):
        sample = synthesize_corpus(1, 64, 2)[0]
        out = apply_attack(sample, AttackSpec("gaussian_noise", noise_variance=0.0, seed=3))
        assert np.array_equal(out.image, sample.image)

    def test_noise_std_matches_spec(self):
        # mid-gray image, so no pixel clamps and the sample std is clean
        sample = Sample(gray(200, 167, 0.5), np.zeros((200, 167), np.uint8))
        out = apply_attack(sample, AttackSpec("gaussian_noise", noise_variance=3.0, seed=9))
        diff = (out.image - sample.image).ravel()
        assert diff.size >= 1e5
        expected = np.sqrt(3.0) / 255.0
        assert abs(diff.std() - expected) / expected < 0.05

    def test_noise_seeded_reproducible(self):
        sample = synthesize_corpus(1, 64, 4)[0]
        spec = AttackSpec("gaussian_noise", noise_variance=3.0, seed=21)
        a = apply_attack(sample, spec)
        b = apply_attack(sample, spec)
        assert np.array_equal(a.image, b.image)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            AttackSpec("resize", resize_ratio=0.0).validate()
        with pytest.raises(ValueError):
            AttackSpec("gaussian_noise", noise_variance=-1.0).validate()
        with pytest.raises(ValueError):
            AttackSpec("blur").validate()


class TestCorpusIO:
    def test_empty_directory(self, tmp_path):
        (tmp_path / "images").mkdir()
        assert load_corpus(tmp_path) == []

    def test_roundtrip_three_pairs_sorted(self, tmp_path):
        samples = synthesize_corpus(3, 64, 5)
        for stem, s in zip(("b", "a", "c"), samples):
            save_sample(s, tmp_path, stem)
        loaded = load_corpus(tmp_path)
        assert [s.meta["stem"] for s in loaded] == ["a", "b", "c"]
        assert all(set(np.unique(s.gt_mask)) <= {0, 1} for s in loaded)

    def test_mask_binarized_from_255(self, tmp_path):
        s = synthesize_corpus(1, 64, 6)[0]
        save_sample(s, tmp_path, "x")
        loaded = load_corpus(tmp_path)[0]
        assert np.array_equal(loaded.gt_mask, s.gt_mask)

    def test_missing_mask_names_stem(self, tmp_path):
        s = synthesize_corpus(1, 64, 7)[0]
        save_sample(s, tmp_path, "orphan")
        (tmp_path / "masks" / "orphan.png").unlink()
        with pytest.raises(FileNotFoundError, match="orphan"):
            load_corpus(tmp_path)

    def test_image_roundtrip_lossless_at_8bit(self, tmp_path):
        s = synthesize_corpus(1, 64, 8)[0]
        save_sample(s, tmp_path, "x")
        loaded = load_corpus(tmp_path)[0]
        assert np.abs(loaded.image - s.image).max() <= 0.5 / 255.0 + 1e-6


class TestInvariants:
    def test_synthesized_samples_valid(self):
        for s in synthesize_corpus(6, 64, 123):
            s.validate()
            assert 0.0 < s.gt_mask.mean() <= 0.9

    def test_synthesis_deterministic(self):
        a = synthesize_corpus(3, 64, 42)
        b = synthesize_corpus(3, 64, 42)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.image, sb.image)
            assert np.array_equal(sa.gt_mask, sb.gt_mask)

    def test_sample_validate_catches_bad_fraction(self):
        bad = Sample(gray(32, 32), np.ones((32, 32), np.uint8))
        with pytest.raises(ValueError, match="forged fraction"):
            bad.validate()

    def test_rasterize_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown region kind"):
            rasterize_region(RegionSpec("blob"), 32, 32)
