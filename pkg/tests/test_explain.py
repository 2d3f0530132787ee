import numpy as np
import pytest

from saliencybench import (
    ConfidenceOutput,
    Image,
    RngStream,
    SaliencyMap,
    Segmentation,
    build_constant_model,
    build_dqn_toy,
    build_planted_model,
    delete_superpixels,
    lime,
    lime_binarize,
    noise_sensitivity,
    occlusion_sensitivity,
    rise,
)
from oracles import brute_force_occlusion, shapley_values

REGION = (22, 22, 40, 40)


class CountingModel:
    """Black-box wrapper that counts per-image model evaluations."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    @property
    def n_outputs(self):
        return self.inner.n_outputs

    def __call__(self, image):
        self.calls += 1
        return self.inner(image)

    def predict_batch(self, batch):
        self.calls += len(batch)
        return self.inner.predict_batch(batch)


def planted(gain=20.0, offset=0.8, seed=7):
    return build_planted_model(REGION, (84, 84, 4), 5, RngStream(seed), gain=gain, offset=offset)


@pytest.fixture(scope="module")
def frame():
    from saliencybench import generate_frames

    return generate_frames("planted-rect", {}, 3, 1)[0]


def region_mask():
    m = np.zeros((84, 84), dtype=bool)
    m[22:62, 22:62] = True
    return m


class TestOcclusionSensitivity:
    def test_constant_model_gives_one_minus_c(self, frame):
        model = build_constant_model([0.7, 0.2, 0.1])
        sal = occlusion_sensitivity(model, frame, patch=5, color=0.0)
        assert np.all(sal.values == np.float32(1.0 - 0.7))

    def test_planted_outside_pixels_score_baseline_exactly(self, frame):
        model = planted()
        sal = occlusion_sensitivity(model, frame, patch=5, color=0.0)
        baseline = 1.0 - model(frame).probabilities[model(frame).predicted_index]
        # pixels whose covering patches never touch the region
        far = np.zeros((84, 84), dtype=bool)
        far[:15, :15] = True
        far[70:, 70:] = True
        assert np.all(sal.values[far] == np.float32(baseline))

    def test_bit_identical_to_brute_force_on_dqn(self, frame):
        model = build_dqn_toy(5, RngStream(42))
        target = model(frame).predicted_index
        sal = occlusion_sensitivity(model, frame, patch=5, color=0.0, stride=5, target=target)
        oracle = brute_force_occlusion(model, frame, patch=5, color=0.0, stride=5, target=target)
        assert np.array_equal(sal.values, oracle)

    def test_bit_identical_to_brute_force_with_overlap(self):
        model = build_planted_model((2, 2, 8, 8), (12, 12, 2), 3, RngStream(5))
        img = Image(RngStream(8).uniforms(12 * 12 * 2).reshape(12, 12, 2).astype(np.float32))
        target = model(img).predicted_index
        sal = occlusion_sensitivity(model, img, patch=4, color=0.0, stride=2, target=target)
        oracle = brute_force_occlusion(model, img, patch=4, color=0.0, stride=2, target=target)
        assert np.array_equal(sal.values, oracle)

    def test_call_count_equals_stride_grid(self, frame):
        counting = CountingModel(planted())
        occlusion_sensitivity(counting, frame, patch=5, color=0.0, stride=5, target=0)
        assert counting.calls == 17 * 17
        counting.calls = 0
        occlusion_sensitivity(counting, frame, patch=5, color=0.0, stride=5)
        assert counting.calls == 17 * 17 + 1  # one extra to resolve the target class

    def test_patch_larger_than_image(self, frame):
        with pytest.raises(ValueError):
            occlusion_sensitivity(planted(), frame, patch=100, color=0.0)

    def test_higher_saliency_inside_planted_region(self, frame):
        model = planted()
        sal = occlusion_sensitivity(model, frame, patch=5, color=0.0)
        inside = region_mask()
        assert sal.values[inside].mean() > sal.values[~inside].mean()


class _FlipModel:
    """Returns logits (1, 0) for the reference image, (0, 1) otherwise."""

    n_outputs = 2

    def __init__(self, reference):
        self.reference = reference

    def __call__(self, image):
        if np.array_equal(image.data, self.reference.data):
            return ConfidenceOutput.from_logits(np.array([1.0, 0.0]))
        return ConfidenceOutput.from_logits(np.array([0.0, 1.0]))


class TestNoiseSensitivity:
    def test_constant_model_all_zero(self, frame):
        model = build_constant_model([0.6, 0.4])
        sal = noise_sensitivity(model, frame, r=5, probe_stride=5)
        assert np.all(sal.values == 0.0)

    def test_single_probe_hand_case(self):
        img = Image(np.full((4, 4, 1), 0.8, dtype=np.float32))
        model = _FlipModel(img)
        sal = noise_sensitivity(model, img, r=1, probe_stride=4, mode="black")
        # S = 0.5 * ((1-0)^2 + (0-1)^2) = 1.0 at the only probe
        assert np.allclose(sal.values, 1.0)

    def test_nonnegative_everywhere(self, frame):
        model = build_dqn_toy(4, RngStream(13))
        sal = noise_sensitivity(model, frame, r=5, probe_stride=7, mode="blur")
        assert np.all(sal.values >= 0.0)

    def test_black_mode_highlights_planted_region(self, frame):
        model = planted()
        sal = noise_sensitivity(model, frame, r=5, probe_stride=5, mode="black")
        inside = region_mask()
        assert sal.values[inside].mean() > sal.values[~inside].mean()
        # probes far outside the region change nothing at all
        assert sal.values[:12, :12].max() == 0.0

    def test_call_count_is_probes_plus_baseline(self, frame):
        counting = CountingModel(planted())
        noise_sensitivity(counting, frame, r=5, probe_stride=5, mode="black")
        assert counting.calls == 17 * 17 + 1

    def test_output_dims_match_image(self, frame):
        sal = noise_sensitivity(planted(), frame, r=5, probe_stride=5, mode="black")
        assert sal.values.shape == (84, 84)

    def test_upsamples_to_requested_dims(self, frame):
        sal = noise_sensitivity(
            planted(), frame, r=5, probe_stride=5, mode="black", target_dims=(100, 90)
        )
        assert sal.values.shape == (100, 90)


class TestRise:
    def test_constant_model_pixel_mean(self, frame):
        c = 0.7
        model = build_constant_model([c, 0.2, 0.1])
        n = 2000
        sal = rise(model, frame, n=n, s=8, p=0.9, rng=RngStream(11))
        # E[S] = c * E[M] / p = c; tolerance from the Monte Carlo spread
        from saliencybench import generate_rise_masks

        masks = generate_rise_masks(n, 8, 0.9, 84, 84, RngStream(11))
        per_mask = np.array([c * m.values.mean() / 0.9 for m in masks])
        tol = 4.0 * per_mask.std() / np.sqrt(n)
        assert abs(sal.values.mean() - c) < tol

    def test_same_seed_bit_identical(self, frame):
        model = planted()
        a = rise(model, frame, n=300, s=8, p=0.9, rng=RngStream(4))
        b = rise(model, frame, n=300, s=8, p=0.9, rng=RngStream(4))
        assert np.array_equal(a.values, b.values)

    def test_different_seeds_correlate_on_planted(self, frame):
        from saliencybench import spearman

        model = planted()
        a = rise(model, frame, n=2000, s=8, p=0.5, rng=RngStream(1))
        b = rise(model, frame, n=2000, s=8, p=0.5, rng=RngStream(2))
        assert spearman(a, b) > 0.7

    def test_call_count(self, frame):
        counting = CountingModel(planted())
        rise(counting, frame, n=150, s=8, p=0.9, rng=RngStream(3), target=0)
        assert counting.calls == 150
        counting.calls = 0
        rise(counting, frame, n=150, s=8, p=0.9, rng=RngStream(3))
        assert counting.calls == 151

    def test_accumulation_order_free(self, frame):
        from saliencybench import generate_rise_masks

        model = planted()
        target = 0
        n = 200
        masks = generate_rise_masks(n, 8, 0.9, 84, 84, RngStream(9))
        f = np.array(
            [
                model(Image(frame.data * m.values[:, :, None])).probabilities[target]
                for m in masks
            ]
        )
        forward_sum = sum(fi * m.values.astype(np.float64) for fi, m in zip(f, masks))
        reverse_sum = sum(fi * m.values.astype(np.float64) for fi, m in zip(f[::-1], masks[::-1]))
        assert np.allclose(forward_sum, reverse_sum, atol=1e-10)
        sal = rise(model, frame, n=n, s=8, p=0.9, rng=RngStream(9), target=target)
        assert np.allclose(sal.values, forward_sum / (0.9 * n), atol=1e-6)


def strip_segmentation(h=10, w=10, strips=5):
    labels = np.zeros((h, w), dtype=np.int32)
    for s in range(strips):
        labels[:, s * (w // strips) : (s + 1) * (w // strips)] = s
    return Segmentation(labels, strips)


class TestLime:
    def test_constant_model_zero_weights(self, frame):
        model = build_constant_model([0.5, 0.3, 0.2])
        expl = lime(model, frame, n_samples=80, rng=RngStream(5))
        assert np.max(np.abs(expl.weights)) < 1e-6

    def test_painted_map_matches_weights_exactly(self, frame):
        model = planted()
        expl = lime(model, frame, n_samples=120, rng=RngStream(6))
        painted = expl.weights[expl.segmentation.labels]
        assert np.array_equal(expl.saliency.values, painted)

    def test_call_count_is_n_samples(self, frame):
        counting = CountingModel(planted())
        lime(counting, frame, n_samples=60, rng=RngStream(7))
        assert counting.calls == 60

    def test_sample_count_floor(self, frame):
        seg = strip_segmentation(84, 84, 4)
        with pytest.raises(ValueError):
            lime(planted(), frame, seg_params=seg, n_samples=4, rng=RngStream(0))

    def test_planted_argmax_matches_exact_shapley(self):
        # 5 vertical strips; the planted region overlaps strip 2 twice as much
        # as strips 1 and 3, so both the exact Shapley attribution and the
        # LIME surrogate must rank strip 2 first.
        region = (0, 3, 10, 4)
        model = build_planted_model(region, (10, 10, 1), 3, RngStream(3), gain=6.0, offset=0.2)
        data = np.full((10, 10, 1), 0.05, dtype=np.float32)
        data[:, 3:7, :] = 0.95
        img = Image(data)
        seg = strip_segmentation()
        target = 0

        def coalition_value(z):
            off = {j for j in range(5) if z[j] == 0}
            return model(delete_superpixels(img, seg, off)).probabilities[target]

        phi = shapley_values(coalition_value, 5)
        assert int(np.argmax(phi)) == 2

        expl = lime(model, img, seg_params=seg, n_samples=400, rng=RngStream(8), target=target)
        assert int(np.argmax(expl.weights)) == 2

    def test_weights_order_free_in_sample_permutation(self, frame):
        # rebuild the weighted ridge fit independently with the samples in a
        # different order; the closed-form solution must not move
        model = planted()
        seg = strip_segmentation(84, 84, 4)
        n_samples, kernel_width, ridge_lambda = 100, 0.25, 1.0
        rng = RngStream(9)
        expl = lime(
            model,
            frame,
            seg_params=seg,
            n_samples=n_samples,
            kernel_width=kernel_width,
            ridge_lambda=ridge_lambda,
            rng=rng,
            target=0,
        )

        # regenerate the documented sample draws: child(1), row-major Bernoulli(0.5)
        k = seg.n_segments
        sample_rng = RngStream(9).child(1)
        z = np.ones((n_samples, k))
        z[1:] = (sample_rng.uniforms((n_samples - 1) * k).reshape(n_samples - 1, k) < 0.5).astype(
            float
        )
        f = np.empty(n_samples)
        from saliencybench import delete_superpixels

        for i in range(n_samples):
            off = {j for j in range(k) if z[i, j] == 0}
            f[i] = model(delete_superpixels(frame, seg, off)).probabilities[0]
        on = z.sum(axis=1)
        d = 1.0 - np.where(on > 0, np.sqrt(on / k), 0.0)
        weights = np.exp(-(d**2) / kernel_width**2)

        perm = np.argsort(RngStream(123).uniforms(n_samples))
        design = np.concatenate([np.ones((n_samples, 1)), z], axis=1)[perm]
        wts = weights[perm]
        fv = f[perm]
        gram = design.T @ (design * wts[:, None])
        gram[np.arange(1, k + 1), np.arange(1, k + 1)] += ridge_lambda
        theta = np.linalg.solve(gram, design.T @ (wts * fv))
        assert np.max(np.abs(theta[1:] - expl.weights.astype(np.float64))) < 1e-6

    def test_same_stream_reproduces_weights(self, frame):
        model = planted()
        seg = strip_segmentation(84, 84, 4)
        expl = lime(model, frame, seg_params=seg, n_samples=100, rng=RngStream(9))
        expl2 = lime(model, frame, seg_params=seg, n_samples=100, rng=RngStream(9))
        assert np.array_equal(expl.weights, expl2.weights)

    def test_explicit_target(self, frame):
        model = planted()
        seg = strip_segmentation(84, 84, 4)
        expl0 = lime(model, frame, seg_params=seg, n_samples=100, rng=RngStream(1), target=0)
        expl1 = lime(model, frame, seg_params=seg, n_samples=100, rng=RngStream(1), target=1)
        assert not np.array_equal(expl0.weights, expl1.weights)

    def test_explanation_record_round_trip(self, frame, tmp_path):
        from saliencybench import read_lime_explanation, write_lime_explanation

        model = planted()
        expl = lime(model, frame, n_samples=120, rng=RngStream(6))
        path = tmp_path / "expl_lime.json"
        write_lime_explanation(expl, path, {"variant": "lime", "n_samples": 120})
        again = read_lime_explanation(path)
        assert np.array_equal(again.weights, expl.weights)
        assert np.array_equal(again.segmentation.labels, expl.segmentation.labels)
        assert again.intercept == expl.intercept
        assert np.array_equal(again.saliency.values, expl.saliency.values)


class TestConfigDefaults:
    def test_primary_domain_defaults(self):
        from saliencybench import LimeConfig, NoiseConfig, OcclusionConfig, RiseConfig

        occ = OcclusionConfig()
        assert occ.patch == 5 and occ.stride is None  # stride defaults to the patch size
        noi = NoiseConfig()
        assert noi.radius == 5 and noi.probe_stride == 5 and noi.mode == "blur"
        ris = RiseConfig()
        assert (ris.n, ris.s, ris.p) == (2000, 8, 0.9)
        lim = LimeConfig()
        assert lim.n_samples == 1000 and lim.top_k == 5
        assert (lim.kernel_size, lim.max_dist, lim.ratio) == (4.0, 200.0, 0.2)
        assert (lim.kernel_width, lim.ridge_lambda) == (0.25, 1.0)


class TestLimeBinarize:
    @pytest.fixture
    def explanation(self, frame):
        seg = strip_segmentation(84, 84, 4)
        return lime(planted(), frame, seg_params=seg, n_samples=100, rng=RngStream(2))

    def test_all_segments_gives_all_ones(self, explanation):
        out = lime_binarize(explanation, explanation.weights.size)
        assert np.all(out.values == 1.0)

    def test_top_one_is_argmax_segment(self, explanation):
        out = lime_binarize(explanation, 1)
        best = int(np.argmax(explanation.weights))
        expected = (explanation.segmentation.labels == best).astype(np.float32)
        assert np.array_equal(out.values, expected)

    def test_sum_equals_selected_area(self, explanation):
        k = 2
        out = lime_binarize(explanation, k)
        order = np.argsort(-explanation.weights.astype(np.float64), kind="stable")
        area = sum((explanation.segmentation.labels == s).sum() for s in order[:k])
        assert out.values.sum() == area

    def test_top_k_out_of_range(self, explanation):
        with pytest.raises(ValueError):
            lime_binarize(explanation, 0)
        with pytest.raises(ValueError):
            lime_binarize(explanation, explanation.weights.size + 1)
