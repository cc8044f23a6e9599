"""Scene generation determinism, the resize rule, PGM files, manifests."""

import json

import numpy as np
import pytest

from slicedet.corpus import (CorpusManifest, GenConfig, ManifestEntry, WordAnnotation,
                             apply_scale_rule, generate_corpus, generate_scene, load_manifest,
                             load_samples, read_pgm, read_pgm_extent, resize_image, save_manifest,
                             scale_boxes, write_pgm)
from slicedet.errors import AnnotationError, ConfigError, IngestionError, InputError


def test_generation_is_bit_deterministic():
    for seed in ([3], [7, 11], 42):
        a = generate_scene(seed)
        b = generate_scene(seed)
        assert np.array_equal(a.pixels, b.pixels)
        assert a.words == b.words
    assert not np.array_equal(generate_scene([1]).pixels, generate_scene([2]).pixels)


def test_scene_invariants():
    rng = np.random.default_rng(0)
    for i in range(100):
        s = generate_scene([500, i])
        h, w = s.extent
        assert 192 <= h <= 288 and 352 <= w <= 512
        px = s.pixels
        assert px.min() >= 0.0 and px.max() <= 1.0
        # quantized to the 8-bit lattice at generation time
        assert np.array_equal(px, np.round(px * 255.0) / 255.0)
        assert len(s.words) >= 1
        for word in s.words:
            assert 0 <= word.x0 < word.x1 <= w
            assert 0 <= word.y0 < word.y1 <= h
            assert word.height >= 10


def test_scene_words_have_dark_ink():
    for i in range(20):
        s = generate_scene([501, i], GenConfig(noise=0.0))
        for word in s.words:
            patch = s.pixels[word.y0:word.y1, word.x0:word.x1]
            assert patch.min() <= 0.35  # bar ink is darker than any background


def test_word_annotation_validation():
    with pytest.raises(AnnotationError):
        WordAnnotation(x0=5, y0=0, x1=5, y1=10)
    box = WordAnnotation(x0=1, y0=2, x1=11, y1=22)
    assert box.box == (1.0, 2.0, 11.0, 22.0)
    assert box.height == 20.0


def test_gen_config_validation():
    with pytest.raises(ConfigError):
        GenConfig(max_words=0)
    with pytest.raises(ConfigError):
        GenConfig(bar_gap_range=(2, 9))
    with pytest.raises(ConfigError):
        GenConfig(height_range=(100, 50))
    with pytest.raises(ConfigError):
        GenConfig(noise=-0.1)


# ---------------------------------------------------------------------------
# resize rule


def test_scale_rule_fixtures():
    factor, extent = apply_scale_rule((800, 1200))
    assert factor == pytest.approx(0.75)
    assert extent == (600, 900)
    factor, extent = apply_scale_rule((500, 2000))
    assert factor == pytest.approx(0.5)
    assert extent == (250, 1000)
    factor, extent = apply_scale_rule((400, 600))
    assert factor == 1.0 and extent == (400, 600)
    with pytest.raises(InputError):
        apply_scale_rule((0, 100))


def test_scale_rule_never_upscales_and_is_idempotent():
    rng = np.random.default_rng(90)
    for trial in range(1000):
        h = int(rng.integers(1, 4000))
        w = int(rng.integers(1, 4000))
        factor, (nh, nw) = apply_scale_rule((h, w))
        assert factor <= 1.0
        assert nh <= h and nw <= w
        factor2, again = apply_scale_rule((nh, nw))
        assert factor2 == 1.0
        assert again == (nh, nw)


def test_resize_image_basics():
    img = np.random.default_rng(91).uniform(size=(40, 60))
    same = resize_image(img, (40, 60))
    assert np.array_equal(same, img) and same is not img
    down = resize_image(img, (20, 30))
    assert down.shape == (20, 30)
    assert down.min() >= img.min() - 1e-12 and down.max() <= img.max() + 1e-12
    flat = resize_image(np.full((32, 32), 0.4), (13, 21))
    assert np.allclose(flat, 0.4)


def test_scale_boxes():
    words = [WordAnnotation(x0=10, y0=20, x1=30, y1=40)]
    assert scale_boxes(words, 0.5) == [(5.0, 10.0, 15.0, 20.0)]
    assert scale_boxes([(2.0, 4.0, 6.0, 8.0)], 2.0) == [(4.0, 8.0, 12.0, 16.0)]


# ---------------------------------------------------------------------------
# PGM


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(92)
    img = np.round(rng.uniform(size=(9, 13)) * 255.0) / 255.0
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    assert np.array_equal(read_pgm(path), img)
    assert read_pgm_extent(path) == (9, 13)


def test_pgm_header_comments_and_whitespace(tmp_path):
    payload = bytes(range(12))
    path = tmp_path / "odd.pgm"
    path.write_bytes(b"P5 # magic\n# a comment line\n  4\n# another\n3 255\n" + payload)
    img = read_pgm(path)
    assert img.shape == (3, 4)
    assert np.array_equal(img, np.arange(12).reshape(3, 4) / 255.0)
    assert read_pgm_extent(path) == (3, 4)


def test_pgm_errors(tmp_path):
    bad_magic = tmp_path / "p2.pgm"
    bad_magic.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(InputError):
        read_pgm(bad_magic)
    with pytest.raises(InputError):
        read_pgm_extent(bad_magic)
    bad_max = tmp_path / "max.pgm"
    bad_max.write_bytes(b"P5\n2 2\n128\n" + bytes(4))
    with pytest.raises(InputError):
        read_pgm(bad_max)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(InputError, match="pixel bytes"):
        read_pgm(short)
    with pytest.raises(InputError):
        read_pgm(tmp_path / "missing.pgm")


# ---------------------------------------------------------------------------
# manifest and corpus directories


def test_manifest_round_trip(tmp_path):
    entries = [ManifestEntry(path="a.pgm", width=64, height=48,
                             words=[WordAnnotation(x0=1, y0=2, x1=20, y1=12, text="xy")]),
               ManifestEntry(path="b.pgm", width=32, height=32, words=[])]
    path = tmp_path / "manifest.json"
    save_manifest(path, CorpusManifest(entries=entries))
    loaded = load_manifest(path, check_images=False)
    assert loaded.version == 1
    assert loaded.entries == entries


def test_manifest_errors(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(IngestionError, match="JSON"):
        load_manifest(path)
    path.write_text(json.dumps({"version": 9, "entries": []}))
    with pytest.raises(IngestionError, match="version"):
        load_manifest(path)
    path.write_text(json.dumps({"version": 1, "entries": [{"path": "x.pgm", "width": 10}]}))
    with pytest.raises(IngestionError, match="entry 0"):
        load_manifest(path, check_images=False)
    doc = {"version": 1, "entries": [{"path": "x.pgm", "width": 10, "height": 10,
                                      "words": [{"x0": 0, "y0": 0, "x1": 50, "y1": 5}]}]}
    path.write_text(json.dumps(doc))
    with pytest.raises(IngestionError, match="exceeds image extent"):
        load_manifest(path, check_images=False)
    doc["entries"][0]["words"] = []
    path.write_text(json.dumps(doc))
    with pytest.raises(IngestionError, match="missing"):
        load_manifest(path, check_images=True)
    with pytest.raises(IngestionError):
        load_manifest(tmp_path / "nope.json")


def test_manifest_checks_image_extent(tmp_path):
    write_pgm(tmp_path / "img.pgm", np.zeros((8, 10)))
    doc = {"version": 1, "entries": [{"path": "img.pgm", "width": 10, "height": 9, "words": []}]}
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(IngestionError, match="manifest says"):
        load_manifest(tmp_path / "manifest.json")


def test_generate_corpus_and_reload_bit_identical(tmp_path):
    out = tmp_path / "corpus"
    manifest = generate_corpus(out, count=5, seed=123)
    assert len(manifest.entries) == 5
    samples = load_samples(out / "manifest.json")
    assert len(samples) == 5
    for i, sample in enumerate(samples):
        fresh = generate_scene([123, i])
        assert np.array_equal(sample.pixels, fresh.pixels)
        assert sample.words == fresh.words
    subset = load_samples(out / "manifest.json", limit=2, offset=1)
    assert len(subset) == 2
    assert np.array_equal(subset[0].pixels, samples[1].pixels)
    with pytest.raises(ConfigError):
        generate_corpus(out, count=0, seed=1)
