import pytest
import torch

from coopdiff.datasets import (
    eight_gaussians,
    make_dataset,
    point_mass,
    swiss_roll,
    synthetic_shapes,
    two_moons,
)
from coopdiff.errors import ConfigError
from coopdiff.evaluation import (
    EvalReport,
    evaluate_samples,
    high_quality_fraction,
    mmd,
    mode_coverage,
    sliced_w2,
    stability_trace,
)


class TestDatasets:
    def test_eight_gaussians_geometry(self):
        ds = eight_gaussians()
        gen = torch.Generator().manual_seed(0)
        pts = ds.sample(4096, gen)
        assert pts.shape == (4096, 2)
        assert ds.centers.shape == (8, 2)
        dists = torch.cdist(pts, ds.centers).min(dim=1).values
        assert dists.max().item() < 6 * ds.mode_std

    def test_point_mass(self):
        ds = point_mass([[1.0, 1.0], [-1.0, -1.0]])
        gen = torch.Generator().manual_seed(0)
        pts = ds.sample(64, gen)
        assert set(map(tuple, pts.tolist())) <= {(1.0, 1.0), (-1.0, -1.0)}

    def test_determinism_given_seed(self):
        for factory in (eight_gaussians, two_moons, swiss_roll):
            ds = factory()
            a = ds.sample(32, torch.Generator().manual_seed(7))
            b = ds.sample(32, torch.Generator().manual_seed(7))
            assert torch.equal(a, b)

    def test_registry(self):
        assert make_dataset("two_moons").name == "two_moons"
        with pytest.raises(ConfigError):
            make_dataset("imagenet")

    def test_synthetic_shapes(self):
        ds = synthetic_shapes(size=16, channels=3)
        imgs = ds.sample(4, torch.Generator().manual_seed(0))
        assert imgs.shape == (4, 3, 16, 16)
        assert imgs.min().item() >= -1.0 and imgs.max().item() <= 1.0


class TestModeCoverage:
    def setup_method(self):
        self.ds = eight_gaussians()
        self.centers = self.ds.centers
        self.radius = 3 * self.ds.mode_std

    def test_centers_cover_everything(self):
        assert mode_coverage(self.centers, self.centers, self.radius) == 1.0

    def test_single_mode_collapse(self):
        samples = self.centers[0].repeat(100, 1)
        assert mode_coverage(samples, self.centers, self.radius) == pytest.approx(1 / 8)

    def test_true_mixture_full_coverage(self):
        gen = torch.Generator().manual_seed(0)
        samples = self.ds.sample(10_000, gen)
        assert mode_coverage(samples, self.centers, self.radius, min_mass=0.02) == 1.0

    def test_monotone_when_filling_uncovered_center(self):
        gen = torch.Generator().manual_seed(1)
        # cover 7 centers generously, leave one empty
        idx = torch.randint(0, 7, (1000,), generator=gen)
        samples = self.centers[idx]
        before = mode_coverage(samples, self.centers, self.radius)
        assert before == pytest.approx(7 / 8)
        filled = torch.cat([samples, self.centers[7].repeat(50, 1)])
        after = mode_coverage(filled, self.centers, self.radius)
        assert after >= before

    def test_empty_samples_rejected(self):
        with pytest.raises(ConfigError):
            mode_coverage(torch.zeros(0, 2), self.centers, self.radius)

    def test_high_quality_fraction(self):
        half_on = torch.cat([self.centers, self.centers + 10.0])
        assert high_quality_fraction(half_on, self.centers, self.radius) == pytest.approx(0.5)


class TestMmd:
    def test_same_set_at_most_zero(self):
        gen = torch.Generator().manual_seed(0)
        a = torch.randn(512, 2, dtype=torch.float64, generator=gen)
        assert mmd(a, a) <= 1e-6

    def test_shifted_normals_separate(self):
        gen = torch.Generator().manual_seed(0)
        a = torch.randn(1000, 2, dtype=torch.float64, generator=gen)
        b = torch.randn(1000, 2, dtype=torch.float64, generator=gen)
        b[:, 0] += 5.0
        assert mmd(a, b) > 0.5

    def test_permutation_invariance(self):
        gen = torch.Generator().manual_seed(0)
        a = torch.randn(128, 2, dtype=torch.float64, generator=gen)
        b = torch.randn(128, 2, dtype=torch.float64, generator=gen)
        perm = torch.randperm(128, generator=gen)
        assert mmd(a, b) == pytest.approx(mmd(a[perm], b), abs=1e-12)

    def test_small_sets_rejected(self):
        with pytest.raises(ConfigError):
            mmd(torch.zeros(1, 2), torch.zeros(10, 2))


class TestSlicedW2:
    def test_identical_sets_zero(self):
        gen = torch.Generator().manual_seed(0)
        a = torch.randn(256, 2, dtype=torch.float64, generator=gen)
        assert sliced_w2(a, a) == pytest.approx(0.0, abs=1e-12)

    def test_shift_detected(self):
        gen = torch.Generator().manual_seed(0)
        a = torch.randn(512, 2, dtype=torch.float64, generator=gen)
        assert sliced_w2(a, a + 3.0) > 1.0


class TestStabilityTrace:
    def test_constant_trace(self):
        summary = stability_trace([1.4] * 600, window=500)
        assert summary.variance == 0.0
        assert summary.mean == pytest.approx(1.4)
        assert not summary.collapse_suspect

    def test_collapse_flag(self):
        summary = stability_trace([0.2] * 600, window=500)
        assert summary.collapse_suspect

    def test_short_log_rejected(self):
        with pytest.raises(ConfigError):
            stability_trace([1.0] * 10, window=500)


class TestEvaluateSamples:
    def test_with_known_centers(self):
        ds = eight_gaussians()
        gen = torch.Generator().manual_seed(0)
        report = evaluate_samples(
            ds.sample(2000, gen), ds.sample(2000, gen),
            centers=ds.centers, radius=3 * ds.mode_std,
            d_loss_log=[1.3] * 600, window=500,
        )
        assert isinstance(report, EvalReport)
        report.validate()
        assert report.mode_coverage == 1.0
        assert report.mmd < 0.01

    def test_derived_centers_path(self):
        ds = two_moons()
        gen = torch.Generator().manual_seed(0)
        report = evaluate_samples(ds.sample(1000, gen), ds.sample(1000, gen))
        report.validate()
        assert report.mode_coverage > 0.5

    def test_nonfinite_rejected(self):
        report = EvalReport(1.0, 1.0, float("nan"), 0.0, 1.0, 1.0)
        with pytest.raises(ConfigError):
            report.validate()
