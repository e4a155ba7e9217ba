import numpy as np
import pytest

from tdet import pnm
from tdet.config import ConfigError, RunConfig, load_config, parse_config_text
from tdet.data import (
    BoxAnnotation,
    DataError,
    load_manifest,
    read_annotations_csv,
    read_detections_csv,
    write_annotations_csv,
    write_detections_csv,
    write_manifest,
)
from tdet.toydata import CLASS_NAMES, generate_toy_dataset, render_image


class TestPnm:
    def test_roundtrip_color(self, tmp_path):
        rs = np.random.RandomState(0)
        img = (rs.rand(11, 7, 3) * 255).astype(np.uint8)
        path = tmp_path / "a.ppm"
        pnm.write_pnm(path, img)
        np.testing.assert_array_equal(pnm.read_pnm(path), img)

    def test_roundtrip_gray(self, tmp_path):
        img = (np.arange(35, dtype=np.uint8)).reshape(5, 7)
        path = tmp_path / "a.pgm"
        pnm.write_pnm(path, img)
        np.testing.assert_array_equal(pnm.read_pnm(path), img)

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 2\n255\n\x01\x02\x03\x04")
        np.testing.assert_array_equal(pnm.read_pnm(path), [[1, 2], [3, 4]])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P3\n2 2\n255\n")
        with pytest.raises(pnm.PnmError):
            pnm.read_pnm(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\nxx")
        with pytest.raises(pnm.PnmError):
            pnm.read_pnm(path)

    def test_quantization_roundtrip_exact(self):
        img = np.arange(256, dtype=np.uint8).reshape(16, 16)
        np.testing.assert_array_equal(pnm.to_uint8(pnm.to_float(img)), img)


class TestCsv:
    def test_annotations_roundtrip(self, tmp_path):
        rows = [
            ("a.ppm", BoxAnnotation(0, 1.0, 2.0, 11.5, 12.25)),
            ("b.ppm", BoxAnnotation(2, 0.0, 0.0, 5.0, 5.0)),
        ]
        path = tmp_path / "ann.csv"
        write_annotations_csv(path, rows)
        back = read_annotations_csv(path)
        assert back == rows

    def test_malformed_line_reports_lineno(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("image_filename,class_id,xmin,ymin,xmax,ymax\nbroken,line\n")
        with pytest.raises(DataError, match=":2"):
            read_annotations_csv(path)

    def test_detections_roundtrip(self, tmp_path):
        rows = [("a.ppm", 1, 0.75, 1.0, 2.0, 3.0, 4.0)]
        path = tmp_path / "det.csv"
        write_detections_csv(path, rows)
        assert read_detections_csv(path) == rows

    def test_degenerate_annotation_rejected(self):
        with pytest.raises(DataError):
            BoxAnnotation(0, 5.0, 1.0, 5.0, 2.0)


class TestManifest:
    def test_write_and_load(self, tmp_path):
        rs = np.random.RandomState(1)
        images = {
            "img_0.ppm": (rs.rand(8, 8, 3) * 255).astype(np.uint8),
            "img_1.ppm": (rs.rand(8, 8, 3) * 255).astype(np.uint8),
        }
        rows = [("img_0.ppm", BoxAnnotation(0, 1, 1, 4, 4))]
        write_manifest(tmp_path / "d", images, rows, ["a", "b"], {"seed": 1})
        m = load_manifest(tmp_path / "d")
        assert m.image_names == ["img_0.ppm", "img_1.ppm"]
        assert m.class_names == ["a", "b"]
        assert len(m.boxes_for("img_0.ppm")) == 1
        assert m.boxes_for("img_1.ppm") == []
        assert (tmp_path / "d" / "provenance.txt").read_text().startswith("seed=1")

    def test_missing_image_reference_rejected(self, tmp_path):
        images = {"img_0.ppm": np.zeros((4, 4, 3), np.uint8)}
        write_manifest(tmp_path / "d", images, [], ["a"])
        write_annotations_csv(
            tmp_path / "d" / "annotations.csv",
            [("missing.ppm", BoxAnnotation(0, 0, 0, 2, 2))],
        )
        with pytest.raises(DataError, match="missing"):
            load_manifest(tmp_path / "d")


class TestRunConfig:
    def test_defaults_roundtrip_hash(self):
        a, b = RunConfig(), RunConfig()
        assert a.config_hash() == b.config_hash()
        b.seed = 5
        assert a.config_hash() != b.config_hash()

    def test_parse_known_keys(self):
        cfg = parse_config_text("seed=9\ndegrade.noise_sigma = 0.01\nmodel.fpn = off\n")
        assert cfg.seed == 9
        assert cfg.degrade_noise_sigma == 0.01
        assert cfg.model_fpn is False

    def test_comments_and_blanks(self):
        cfg = parse_config_text("# comment\n\nseed=3 # trailing\n")
        assert cfg.seed == 3

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("not.a.key=1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config_text("train.steps=soon\n")

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")


class TestToyData:
    def test_render_deterministic(self):
        a_img, a_anns = render_image(99, 64, 12, 32, 3)
        b_img, b_anns = render_image(99, 64, 12, 32, 3)
        np.testing.assert_array_equal(a_img, b_img)
        assert a_anns == b_anns

    def test_boxes_contain_shape_pixels(self):
        # object colors sit outside the background noise band, so colored
        # pixels identify the rendered shapes exactly
        for seed in range(12):
            img, anns = render_image(seed, 64, 12, 32, 3)
            assert 1 <= len(anns) <= 3
            for ann in anns:
                assert 0 <= ann.xmin < ann.xmax <= 64
                assert 0 <= ann.ymin < ann.ymax <= 64
            work = img.astype(np.float32) / 255.0
            outside_band = ((work < 0.25) | (work > 0.75)).any(axis=-1)
            ys, xs = np.nonzero(outside_band)
            for y, x in zip(ys, xs):
                inside_any = any(
                    ann.xmin <= x + 0.5 <= ann.xmax and ann.ymin <= y + 0.5 <= ann.ymax
                    for ann in anns
                )
                assert inside_any, f"colored pixel ({x},{y}) outside every box (seed {seed})"

    def test_dataset_bitwise_reproducible(self, tmp_path):
        a = generate_toy_dataset(tmp_path / "a", 6, seed=7, split="train")
        b = generate_toy_dataset(tmp_path / "b", 6, seed=7, split="train")
        for name in a.image_names:
            assert (tmp_path / "a" / "images" / name).read_bytes() == (
                tmp_path / "b" / "images" / name
            ).read_bytes()
        assert (tmp_path / "a" / "annotations.csv").read_text() == (
            tmp_path / "b" / "annotations.csv"
        ).read_text()

    def test_splits_differ(self, tmp_path):
        a = generate_toy_dataset(tmp_path / "a", 2, seed=7, split="train")
        b = generate_toy_dataset(tmp_path / "b", 2, seed=7, split="test")
        assert (tmp_path / "a" / "images" / a.image_names[0]).read_bytes() != (
            tmp_path / "b" / "images" / b.image_names[0]
        ).read_bytes()

    def test_class_histogram_roughly_uniform(self, tmp_path):
        m = generate_toy_dataset(tmp_path / "d", 200, seed=3, split="train")
        counts = np.zeros(3)
        for name in m.image_names:
            for ann in m.boxes_for(name):
                counts[ann.class_id] += 1
        frac = counts / counts.sum()
        assert np.abs(frac - 1 / 3).max() < 0.05
        assert len(CLASS_NAMES) == 3
