import csv
import json

import numpy as np
import pytest
from PIL import Image

from ailsr.data import load_eval_images
from ailsr.evaluation import (
    PSNR_CAP,
    evaluate,
    evaluate_bicubic,
    export_importance_png,
    psnr,
    ssim,
    write_csv,
    write_summary,
)
from ailsr.importance import ImportanceMap
from ailsr.model import ModelSpec, build_network, parameter_digest, zero_network
from ailsr.samples import sample_dir

from oracles import loop_psnr


@pytest.fixture(scope="module")
def val_images():
    return load_eval_images(sample_dir("val"))


class TestPsnr:
    def test_identical_is_cap(self):
        y = np.random.default_rng(0).uniform(0, 1, (8, 8))
        assert psnr(y, y) == PSNR_CAP == 100.0

    def test_known_mse(self):
        y = np.full((10, 10), 0.5)
        assert psnr(y, y + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_known_mse_after_shave(self):
        y = np.full((10, 10), 0.5)
        y_hat = y + 0.1
        y_hat[0, :] = 0.0  # inside the shaved frame
        assert psnr(y, y_hat, shave=1) == pytest.approx(20.0, abs=1e-9)

    @pytest.mark.parametrize("shave", [0, 2, 3])
    def test_matches_loop_oracle(self, shave):
        r = np.random.default_rng(shave)
        y = r.uniform(0, 1, (12, 15))
        y_hat = y + r.normal(scale=0.2, size=y.shape)
        assert psnr(y, y_hat, shave) == pytest.approx(loop_psnr(y, y_hat, shave), abs=1e-9)

    def test_symmetric_on_unit_range(self):
        r = np.random.default_rng(1)
        a, b = r.uniform(0, 1, (9, 9)), r.uniform(0, 1, (9, 9))
        assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)

    def test_monotone_in_shift(self):
        y = np.full((8, 8), 0.5)
        vals = [psnr(y, y + e) for e in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_shave_changes_value(self, val_images):
        y = val_images[0][1]
        noisy = np.clip(y + np.random.default_rng(0).normal(scale=0.05, size=y.shape), 0, 1)
        assert psnr(y, noisy, 0) != psnr(y, noisy, 2)


class TestSsim:
    def test_identity_on_corpus(self, val_images):
        for _, y in val_images + load_eval_images(sample_dir("train")):
            assert abs(ssim(y, y) - 1.0) <= 1e-12

    def test_inverted_low(self, val_images):
        y = val_images[0][1]
        assert ssim(y, 1.0 - y) < 0.5

    def test_constant_luminance_term(self):
        a = np.full((16, 16), 0.4)
        b = a + 0.1
        c1 = 0.01 ** 2
        ref = (2 * 0.4 * 0.5 + c1) / (0.4 ** 2 + 0.5 ** 2 + c1)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-9)

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((12, 12)), np.zeros((12, 12)), shave=1)

    def test_in_range(self):
        r = np.random.default_rng(0)
        v = ssim(r.uniform(0, 1, (20, 20)), r.uniform(0, 1, (20, 20)))
        assert -1.0 <= v <= 1.0


class TestEvaluate:
    def test_identity_net_equals_bicubic(self, val_images):
        net = zero_network(ModelSpec(depth=3, base_width=2))
        a = evaluate(net, val_images, 2)
        b = evaluate_bicubic(val_images, 2)
        assert [r.psnr for r in a.images] == [r.psnr for r in b.images]
        assert [r.ssim for r in a.images] == [r.ssim for r in b.images]
        assert len(a.images) == len(val_images)

    def test_read_only_and_deterministic(self, val_images):
        net = build_network(ModelSpec(depth=3, base_width=3))
        before = parameter_digest(net)
        a = evaluate(net, val_images[:2], 3)
        b = evaluate(net, val_images[:2], 3)
        assert parameter_digest(net) == before
        assert a.summary() == b.summary()

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate_bicubic([], 2)

    def test_reports(self, tmp_path, val_images):
        res = evaluate_bicubic(val_images, 2, "val")
        write_csv(res, tmp_path / "e.csv")
        rows = list(csv.DictReader(open(tmp_path / "e.csv")))
        assert len(rows) == len(val_images)
        doc = write_summary(res, tmp_path / "s.json", config_hash="abc", rounds=[{"round": 0}])
        back = json.loads((tmp_path / "s.json").read_text())
        assert back == doc
        assert back["config_hash"] == "abc" and back["convention"]["shave"]
        assert back["mean_psnr"] == pytest.approx(res.mean_psnr)


class TestExport:
    @pytest.mark.parametrize("value,pixel", [(1.0, 255), (0.0, 0), (0.5, 128)])
    def test_scaling(self, tmp_path, value, pixel):
        export_importance_png(ImportanceMap("a", np.full((3, 4), value)), tmp_path / "m.png")
        img = np.asarray(Image.open(tmp_path / "m.png"))
        assert img.shape == (3, 4) and np.all(img == pixel)

    def test_io_failure(self, tmp_path):
        from ailsr.data import DataError

        with pytest.raises(DataError):
            export_importance_png(ImportanceMap("a", np.ones((2, 2))), tmp_path / "no" / "m.png")
