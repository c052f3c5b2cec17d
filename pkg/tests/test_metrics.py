"""Metrics: SSIM/PSNR against brute-force oracles, reports, denoising assembly."""

import csv
import json
import math

import numpy as np
import pytest

from dmae.datasets import Dataset, gen_dataset
from dmae.losses import norm_pix
from dmae.metrics import (
    DenoisingReport,
    EvalReport,
    PSNR_CAP_DB,
    assemble_denoised,
    classification_report,
    denoise_image,
    evaluate_classifier,
    evaluate_denoising,
    export_latents,
    gaussian_window,
    mse,
    psnr,
    psnr_result,
    ssim,
)
from dmae.model import ModelConfig, init_params, patchify, plan_mask
from dmae.render import RenderConfig

TINY32 = ModelConfig(
    img_size=32, patch_size=8, enc_dim=8, enc_depth=1, enc_heads=2,
    dec_dim=8, dec_depth=1, dec_heads=2, mask_ratio=0.75, cls_head_hidden=0,
)


def brute_force_ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Window-by-window reference SSIM (explicit loops, no convolution)."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    win = gaussian_window()
    n = win.shape[0]
    c1, c2 = (0.01 * max_val) ** 2, (0.03 * max_val) ** 2
    chans = []
    for c in range(a.shape[0]):
        vals = []
        for i in range(a.shape[1] - n + 1):
            for j in range(a.shape[2] - n + 1):
                x = a[c, i : i + n, j : j + n]
                y = b[c, i : i + n, j : j + n]
                mx = (win * x).sum()
                my = (win * y).sum()
                vx = (win * x * x).sum() - mx * mx
                vy = (win * y * y).sum() - my * my
                cov = (win * x * y).sum() - mx * my
                vals.append(
                    ((2 * mx * my + c1) * (2 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
            # row done
        chans.append(np.mean(vals))
    return float(np.mean(chans))


class TestPSNR:
    def test_known_value(self):
        a = np.zeros((8, 8))
        b = np.full((8, 8), 0.1)  # MSE 0.01 -> 20 dB
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_strictly_decreasing_in_mse(self):
        a = np.zeros((8, 8))
        values = [psnr(a, np.full((8, 8), d)) for d in (0.01, 0.02, 0.05, 0.2, 0.7)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_identical_images_capped_and_flagged(self):
        a = np.random.default_rng(0).random((3, 16, 16))
        res = psnr_result(a, a.copy())
        assert res.value_db == PSNR_CAP_DB == 100.0
        assert res.identical

    def test_near_identical_not_flagged(self):
        a = np.zeros((8, 8))
        b = a.copy()
        b[0, 0] = 1e-8
        res = psnr_result(a, b)
        assert not res.identical
        assert np.isfinite(res.value_db)

    def test_max_val_scaling(self):
        a, b = np.zeros((8, 8)), np.full((8, 8), 0.1)
        assert psnr(a, b, max_val=2.0) == pytest.approx(psnr(a, b) + 20.0 * math.log10(2.0), abs=1e-9)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSSIM:
    def test_window_properties(self):
        win = gaussian_window()
        assert win.shape == (11, 11)
        assert win.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(win, win.T, atol=1e-18)  # symmetric
        assert win[5, 5] == win.max()

    def test_self_similarity_is_one(self):
        a = np.random.default_rng(1).random((3, 16, 16))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a, b = rng.random((2, 14, 15)), rng.random((2, 14, 15))
            assert ssim(a, b) == pytest.approx(brute_force_ssim(a, b), abs=1e-6)

    def test_2d_equals_single_channel_3d(self):
        rng = np.random.default_rng(4)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert ssim(a, b) == ssim(a[None], b[None])

    def test_image_smaller_than_window_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))

    def test_noise_lowers_similarity(self):
        rng = np.random.default_rng(5)
        a = rng.random((16, 16))
        assert ssim(a, np.clip(a + rng.normal(0, 0.3, a.shape), 0, 1)) < 0.9


class TestClassificationReport:
    def test_hand_computed_case(self):
        report = classification_report(
            labels=[0, 0, 1, 2],
            predictions=[0, 1, 1, 2],
            snrs=[-10.0, -10.0, 0.0, 0.0],
            class_names=["a", "b", "c"],
        )
        assert report.overall_accuracy == 0.75
        np.testing.assert_array_equal(report.confusion, [[1, 1, 0], [0, 1, 0], [0, 0, 1]])
        assert report.per_class_accuracy == {"a": 0.5, "b": 1.0, "c": 1.0}
        assert report.per_snr_accuracy == {-10.0: 0.5, 0.0: 1.0}
        assert report.n_samples == 4

    def test_confusion_trace_identity(self):
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 5, size=200)
        preds = rng.integers(0, 5, size=200)
        report = classification_report(labels, preds, np.zeros(200), list("abcde"))
        assert report.confusion.trace() / report.confusion.sum() == report.overall_accuracy
        assert report.confusion.sum() == 200

    def test_absent_class_is_nan(self):
        report = classification_report([0, 0], [0, 1], [0.0, 0.0], ["a", "b"])
        assert math.isnan(report.per_class_accuracy["b"])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            classification_report([], [], [], ["a"])

    def test_json_and_text_rendering(self):
        report = classification_report([0, 1], [0, 1], [5.0, -5.0], ["x", "y"])
        doc = json.loads(report.to_json())
        assert doc["overall_accuracy"] == 1.0
        assert doc["confusion"] == [[1, 0], [0, 1]]
        text = report.to_text()
        assert "overall accuracy: 1.0000" in text
        assert "-5.0 dB" in text and "x" in text


@pytest.fixture(scope="module")
def metrics_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("mds")
    gen_dataset(root, master_seed=77, cfg=RenderConfig(image_size=32),
                pretrain_count=10, train_count=10, test_count=10)
    return Dataset(root)


class TestEvaluateClassifier:
    def test_report_over_split(self, metrics_dataset):
        params = init_params(TINY32, 0, phase="finetune")
        report = evaluate_classifier(params, TINY32, metrics_dataset, "test", batch_size=4)
        assert report.n_samples == 10
        assert report.confusion.sum() == 10
        assert 0.0 <= report.overall_accuracy <= 1.0
        assert report.class_names == list(metrics_dataset.manifest["schemes"])

    def test_head_class_mismatch_rejected(self, metrics_dataset):
        cfg = ModelConfig(
            img_size=32, patch_size=8, enc_dim=8, enc_depth=1, enc_heads=2,
            dec_dim=8, dec_depth=1, dec_heads=2, cls_head_hidden=0, n_downstream_classes=5,
        )
        params = init_params(cfg, 0, phase="finetune")
        with pytest.raises(ValueError, match="classes"):
            evaluate_classifier(params, cfg, metrics_dataset, "test")


class TestDenoisingPath:
    def test_assemble_visible_passthrough_masked_denormed(self):
        rng = np.random.default_rng(7)
        noisy = rng.random((3, 32, 32))
        recon = rng.normal(size=(16, 192))
        plan = plan_mask(16, 0.75, 3)
        out = assemble_denoised(recon, noisy, plan.masked_ids, TINY32)
        out_patches = patchify(out, 8)
        noisy_patches = patchify(noisy, 8)
        for v in plan.visible_ids:
            np.testing.assert_array_equal(out_patches[v], noisy_patches[v])
        for m in plan.masked_ids:
            assert not np.array_equal(out_patches[m], noisy_patches[m])

    def test_identity_stub_recovers_input(self):
        # A "denoiser" that predicts the normalized input must reassemble the
        # input itself (denormalization inverts the normalization).
        rng = np.random.default_rng(8)
        noisy = rng.random((3, 32, 32))
        recon = norm_pix(patchify(noisy, 8))
        plan = plan_mask(16, 0.75, 5)
        out = assemble_denoised(recon, noisy, plan.masked_ids, TINY32)
        np.testing.assert_allclose(out, noisy, atol=1e-5)

    def test_denoise_image_deterministic(self):
        rng = np.random.default_rng(9)
        noisy = rng.random((3, 32, 32)).astype(np.float32)
        params = init_params(TINY32, 0)
        a, ids_a = denoise_image(noisy, params, TINY32, mask_seed=4)
        b, ids_b = denoise_image(noisy, params, TINY32, mask_seed=4)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ids_a, ids_b)
        c, _ = denoise_image(noisy, params, TINY32, mask_seed=5)
        assert not np.array_equal(a, c)

    def test_evaluate_denoising_report(self):
        rng = np.random.default_rng(10)
        clean = rng.random((4, 3, 32, 32)).astype(np.float32)
        noisy = np.clip(clean + rng.normal(0, 0.2, clean.shape), 0, 1).astype(np.float32)
        params = init_params(TINY32, 0)
        report = evaluate_denoising(params, TINY32, noisy, clean, seed=1)
        assert isinstance(report, DenoisingReport)
        assert report.n_pairs == 4
        assert report.mean_psnr_noisy > 0
        assert json.loads(report.to_json())["n_pairs"] == 4

    def test_evaluate_denoising_shape_mismatch(self):
        params = init_params(TINY32, 0)
        with pytest.raises(ValueError):
            evaluate_denoising(params, TINY32, np.zeros((2, 3, 32, 32)), np.zeros((3, 3, 32, 32)))


class TestExportLatents:
    def test_row_count_and_width(self, metrics_dataset, tmp_path):
        params = init_params(TINY32, 0)
        out = tmp_path / "latents.csv"
        n = export_latents(params, TINY32, metrics_dataset, "test", out)
        assert n == 10
        with open(out) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["label", "snr_db"] + [f"f{i}" for i in range(8)]
        assert len(rows) == 11
        assert all(len(r) == 10 for r in rows)

    def test_none_and_zero_mask_ratio_identical(self, metrics_dataset, tmp_path):
        params = init_params(TINY32, 0)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        export_latents(params, TINY32, metrics_dataset, "test", a, mask_ratio=None)
        export_latents(params, TINY32, metrics_dataset, "test", b, mask_ratio=0.0)
        assert a.read_text() == b.read_text()

    def test_masking_changes_features(self, metrics_dataset, tmp_path):
        params = init_params(TINY32, 0)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        export_latents(params, TINY32, metrics_dataset, "test", a, mask_ratio=None)
        export_latents(params, TINY32, metrics_dataset, "test", b, mask_ratio=0.75)
        assert a.read_text() != b.read_text()

    def test_masked_export_reproducible(self, metrics_dataset, tmp_path):
        params = init_params(TINY32, 0)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        export_latents(params, TINY32, metrics_dataset, "test", a, mask_ratio=0.75, seed=3)
        export_latents(params, TINY32, metrics_dataset, "test", b, mask_ratio=0.75, seed=3)
        assert a.read_text() == b.read_text()
