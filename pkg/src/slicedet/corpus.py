"""Deterministic synthetic text scenes, the resize rule, and corpus files.

Words are groups of dark vertical glyph bars on a light textured
background. Bars inside a word sit fewer than 8 px apart; words on a
shared baseline are separated either by wide gaps (>= 64 px) or, for
pairs whose second word is about half the height, by narrow gaps that
produce space boxes tight enough to label anchors as space negatives.
Word heights mix three scales so every anchor height sees training
signal near words.

Images are stored as binary 8-bit PGM plus a JSON manifest; pixel values
are quantized to the 8-bit lattice at generation time so regenerating
and reloading give bit-identical arrays.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import AnnotationError, ConfigError, IngestionError, InputError
from .grid import Grid

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"

DEFAULT_SCALE_LIMITS = (600, 1000)

WORD_SCALES = ((18, 28), (40, 60), (84, 110))
WORD_SCALE_WEIGHTS = (0.30, 0.50, 0.20)


@dataclass(frozen=True)
class WordAnnotation:
    x0: int
    y0: int
    x1: int
    y1: int
    text: str | None = None

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise AnnotationError("word box %r is not strictly ordered"
                                  % ((self.x0, self.y0, self.x1, self.y1),))

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (float(self.x0), float(self.y0), float(self.x1), float(self.y1))

    @property
    def height(self) -> float:
        return float(self.y1 - self.y0)


@dataclass
class SceneSample:
    image: Grid  # [1, 1, H, W], values on the k/255 lattice
    words: list[WordAnnotation]
    seed: int | None = None

    @property
    def pixels(self) -> np.ndarray:
        return self.image.data[0, 0]

    @property
    def extent(self) -> tuple[int, int]:
        return self.image.shape[2], self.image.shape[3]


@dataclass(frozen=True)
class GenConfig:
    height_range: tuple[int, int] = (192, 288)
    width_range: tuple[int, int] = (352, 512)
    max_words: int = 6
    noise: float = 0.04
    bar_width_range: tuple[int, int] = (2, 4)
    bar_gap_range: tuple[int, int] = (2, 5)
    ink_range: tuple[float, float] = (0.05, 0.35)
    narrow_pair_rate: float = 0.30

    def __post_init__(self):
        if not 1 <= self.max_words <= 8:
            raise ConfigError("max_words must lie in 1..8, got %d" % self.max_words)
        for name in ("height_range", "width_range", "bar_width_range", "bar_gap_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError("%s %r is not an increasing positive range" % (name, (lo, hi)))
        if self.bar_gap_range[1] >= 8:
            raise ConfigError("intra-word bar gaps must stay below 8 px")
        if self.noise < 0.0:
            raise ConfigError("noise level must be >= 0")


def _draw_word(rng: np.random.Generator, img: np.ndarray, x0: int, y0: int,
               h: int, config: GenConfig) -> WordAnnotation | None:
    """Render one bar-glyph word starting at (x0, y0); None if it cannot fit."""
    width_limit = img.shape[1] - 10
    n_chars = int(rng.integers(2, 7))
    x = x0
    end = x0
    for ci in range(n_chars):
        char_w = int(rng.integers(max(4, round(0.45 * h)), max(5, round(0.62 * h)) + 1))
        char_w = min(char_w, width_limit - x)
        if char_w < 4:
            break
        cx = x
        while cx < x + char_w:
            bw = min(int(rng.integers(config.bar_width_range[0], config.bar_width_range[1] + 1)),
                     x + char_w - cx)
            if bw < 1:
                break
            ink = rng.uniform(config.ink_range[0], config.ink_range[1])
            img[y0:y0 + h, cx:cx + bw] = ink
            end = max(end, cx + bw)
            cx += bw + int(rng.integers(config.bar_gap_range[0], config.bar_gap_range[1] + 1))
        x += char_w
        if ci < n_chars - 1:
            x += int(rng.integers(3, 8))  # inter-char gap, still < 8 px
    if end <= x0:
        return None
    return WordAnnotation(x0=x0, y0=y0, x1=end, y1=y0 + h)


def _pick_height(rng: np.random.Generator, image_h: int) -> int:
    u = rng.random()
    acc = 0.0
    lo, hi = WORD_SCALES[-1]
    for (slo, shi), wgt in zip(WORD_SCALES, WORD_SCALE_WEIGHTS):
        acc += wgt
        if u < acc:
            lo, hi = slo, shi
            break
    h = int(rng.integers(lo, hi + 1))
    return min(h, image_h - 24)


def generate_scene(seed, config: GenConfig | None = None) -> SceneSample:
    """Render one deterministic scene; identical (seed, config) => identical bits."""
    config = config or GenConfig()
    rng = np.random.default_rng(seed)
    h = int(rng.integers(config.height_range[0], config.height_range[1] + 1))
    w = int(rng.integers(config.width_range[0], config.width_range[1] + 1))

    base = rng.uniform(0.60, 0.80)
    gx, gy = rng.uniform(-0.08, 0.08, size=2)
    yy, xx = np.mgrid[0:h, 0:w]
    img = base + gx * (xx / w - 0.5) + gy * (yy / h - 0.5)

    words: list[WordAnnotation] = []
    occupied: list[tuple[int, int]] = []
    budget = config.max_words
    for _ in range(int(rng.integers(1, 3))):
        if budget <= 0:
            break
        word_h = _pick_height(rng, h)
        if word_h < 10:
            continue
        placed_y = None
        for _ in range(20):
            y_hi = max(13, h - word_h - 12)
            y0 = int(rng.integers(12, y_hi))
            if all(y0 - 20 >= o1 or o0 >= y0 + word_h + 20 for o0, o1 in occupied):
                placed_y = y0
                break
        if placed_y is None:
            continue
        n_words = min(int(rng.integers(1, 4)), budget)
        narrow = n_words >= 2 and word_h >= 36 and rng.random() < config.narrow_pair_rate
        x = int(rng.integers(10, 41))
        placed_any = False
        for wi in range(n_words):
            this_h, this_y = word_h, placed_y
            if narrow and wi == 1:
                this_h = max(10, int(round(word_h * rng.uniform(0.50, 0.58))))
                this_y = placed_y + (word_h - this_h) // 2
            word = _draw_word(rng, img, x, this_y, this_h, config)
            if word is None:
                break
            words.append(word)
            placed_any = True
            budget -= 1
            if budget <= 0:
                break
            if narrow and wi == 0:
                gap = int(rng.integers(18, 27))
            else:
                gap = int(rng.integers(64, max(69, min(97, 2 * word_h - 9))))
            x = word.x1 + gap
        if placed_any:
            occupied.append((placed_y, placed_y + word_h))

    if not words:  # every line failed to fit; fall back to a single word
        word_h = min(40, h - 24)
        word = _draw_word(rng, img, 12, max(12, (h - word_h) // 2), word_h, config)
        if word is not None:
            words.append(word)

    if config.noise > 0.0:
        img = img + rng.normal(0.0, config.noise, size=(h, w))
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return SceneSample(image=Grid(img[None, None]), words=words,
                       seed=seed if isinstance(seed, int) else None)


# ---------------------------------------------------------------------------
# resize rule


def apply_scale_rule(extent: tuple[int, int],
                     limits: tuple[int, int] = DEFAULT_SCALE_LIMITS):
    """Uniform shrink factor capping the short side and the long side.

    factor = min(limits[0]/short_side, limits[1]/long_side, 1); images are
    never upscaled, and reapplying the rule to the result is a no-op.
    Returns (factor, (new_h, new_w)).
    """
    h, w = int(extent[0]), int(extent[1])
    if h < 1 or w < 1:
        raise InputError("extent %r is empty" % (extent,))
    short, long_ = float(min(h, w)), float(max(h, w))
    factor = min(limits[0] / short, limits[1] / long_, 1.0)
    return factor, (int(round(h * factor)), int(round(w * factor)))


def resize_image(pixels: np.ndarray, extent: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a [H, W] image to `extent` (pixel-center aligned)."""
    h, w = pixels.shape
    oh, ow = int(extent[0]), int(extent[1])
    if (oh, ow) == (h, w):
        return pixels.copy()
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = pixels[y0][:, x0] * (1 - fx) + pixels[y0][:, x1] * fx
    bot = pixels[y1][:, x0] * (1 - fx) + pixels[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def scale_boxes(words, factor: float) -> list[tuple[float, float, float, float]]:
    out = []
    for wrd in words:
        b = wrd.box if hasattr(wrd, "box") else wrd
        out.append(tuple(float(v) * factor for v in b))
    return out


# ---------------------------------------------------------------------------
# PGM files


def write_pgm(path, pixels: np.ndarray) -> None:
    """Binary 8-bit PGM from a [H, W] float image in [0, 1]."""
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def _pgm_tokens(buf: bytes):
    """Yield header tokens, skipping whitespace and # comments."""
    i = 0
    while i < len(buf):
        ch = buf[i:i + 1]
        if ch.isspace():
            i += 1
            continue
        if ch == b"#":
            while i < len(buf) and buf[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j:j + 1].isspace():
            j += 1
        yield buf[i:j], j
        i = j


def read_pgm_extent(path) -> tuple[int, int]:
    """(height, width) from a PGM header without loading the pixels."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(64)
    except OSError as exc:
        raise InputError("cannot read image %s: %s" % (path, exc)) from exc
    toks = []
    for tok, _ in _pgm_tokens(head):
        toks.append(tok)
        if len(toks) == 3:
            break
    if len(toks) < 3 or toks[0] != b"P5":
        raise InputError("%s is not a binary PGM" % path)
    return int(toks[2]), int(toks[1])


def read_pgm(path) -> np.ndarray:
    """Load a binary 8-bit PGM as a [H, W] float image in [0, 1]."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise InputError("cannot read image %s: %s" % (path, exc)) from exc
    toks = []
    pos = 0
    for tok, j in _pgm_tokens(buf):
        toks.append(tok)
        pos = j
        if len(toks) == 4:
            break
    if len(toks) < 4 or toks[0] != b"P5":
        raise InputError("%s is not a binary PGM" % path)
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    if maxval != 255:
        raise InputError("%s: only maxval 255 is supported" % path)
    data = buf[pos + 1:pos + 1 + h * w]
    if len(data) != h * w:
        raise InputError("%s: expected %d pixel bytes, found %d" % (path, h * w, len(data)))
    return np.frombuffer(data, dtype=np.uint8).astype(np.float64).reshape(h, w) / 255.0


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    path: str
    width: int
    height: int
    words: list[WordAnnotation] = field(default_factory=list)


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    version: int = MANIFEST_VERSION


def save_manifest(path, manifest: CorpusManifest) -> None:
    doc = {"version": manifest.version, "entries": []}
    for e in manifest.entries:
        words = []
        for wd in e.words:
            rec = {"x0": wd.x0, "y0": wd.y0, "x1": wd.x1, "y1": wd.y1}
            if wd.text is not None:
                rec["text"] = wd.text
            words.append(rec)
        doc["entries"].append({"path": e.path, "width": e.width, "height": e.height,
                               "words": words})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_manifest(path, check_images: bool = True) -> CorpusManifest:
    """Parse and validate a manifest; image files are checked against it."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IngestionError("cannot read manifest %s: %s" % (path, exc)) from exc
    except json.JSONDecodeError as exc:
        raise IngestionError("manifest %s is not valid JSON: %s" % (path, exc)) from exc
    if not isinstance(doc, dict) or doc.get("version") != MANIFEST_VERSION:
        raise IngestionError("manifest %s: unsupported or missing version" % path)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for i, rec in enumerate(doc.get("entries", [])):
        where = "manifest %s entry %d" % (path, i)
        try:
            img_path = rec["path"]
            width, height = int(rec["width"]), int(rec["height"])
            words = []
            for wrec in rec["words"]:
                words.append(WordAnnotation(x0=int(wrec["x0"]), y0=int(wrec["y0"]),
                                            x1=int(wrec["x1"]), y1=int(wrec["y1"]),
                                            text=wrec.get("text")))
        except (KeyError, TypeError, ValueError, AnnotationError) as exc:
            raise IngestionError("%s is malformed: %s" % (where, exc)) from exc
        for wd in words:
            if wd.x0 < 0 or wd.y0 < 0 or wd.x1 > width or wd.y1 > height:
                raise IngestionError("%s: word %r exceeds image extent (%d, %d)"
                                     % (where, wd.box, width, height))
        if check_images:
            full = os.path.join(base, img_path)
            if not os.path.exists(full):
                raise IngestionError("%s: image file %s is missing" % (where, img_path))
            try:
                eh, ew = read_pgm_extent(full)
            except InputError as exc:
                raise IngestionError("%s: %s" % (where, exc)) from exc
            if (eh, ew) != (height, width):
                raise IngestionError("%s: image %s is (%d, %d), manifest says (%d, %d)"
                                     % (where, img_path, eh, ew, height, width))
        entries.append(ManifestEntry(path=img_path, width=width, height=height, words=words))
    return CorpusManifest(entries=entries)


def generate_corpus(out_dir, count: int, seed: int,
                    config: GenConfig | None = None) -> CorpusManifest:
    """Write `count` PGM scenes plus manifest.json into out_dir."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(count):
        sample = generate_scene([seed, i], config)
        name = "img_%04d.pgm" % i
        write_pgm(os.path.join(out_dir, name), sample.pixels)
        h, w = sample.extent
        entries.append(ManifestEntry(path=name, width=w, height=h, words=list(sample.words)))
    manifest = CorpusManifest(entries=entries)
    save_manifest(os.path.join(out_dir, MANIFEST_NAME), manifest)
    return manifest


def load_samples(manifest_path, limit: int | None = None,
                 offset: int = 0) -> list[SceneSample]:
    """Materialize SceneSamples (images + words) from a manifest."""
    manifest = load_manifest(manifest_path, check_images=True)
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for e in manifest.entries[offset:None if limit is None else offset + limit]:
        pixels = read_pgm(os.path.join(base, e.path))
        out.append(SceneSample(image=Grid(pixels[None, None]), words=list(e.words)))
    return out
