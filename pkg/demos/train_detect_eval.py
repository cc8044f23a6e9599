"""Small end-to-end run: generate, train both stages, detect, score, draw.

Uses a reduced model so the whole script takes about a minute. Outputs
(detections JSON, one SVG overlay) land in a temp directory whose path is
printed at the end.

Run: python3 demos/train_detect_eval.py
"""

import os
import tempfile

from slicedet.cli import main

workdir = tempfile.mkdtemp(prefix="slicedet_demo_")
corpus = os.path.join(workdir, "corpus")
model = os.path.join(workdir, "model.rtnm")
dets = os.path.join(workdir, "detections.json")
svg = os.path.join(workdir, "overlay.svg")
conf = os.path.join(workdir, "small.conf")

with open(conf, "w", encoding="utf-8") as fh:
    fh.write("""\
# half-width model, single residual blocks: trains in about a minute and
# still reaches F around 0.7 on its own training images
seed = 5
stage16_channels = 32
stage32_channels = 48
fused_channels = 32
blocks_per_stage = 1
rpn_channels = 32
rnn_hidden = 16
pool_bins = 2
head_hidden = 16
stage1_epochs = 32
stage2_epochs = 20
batch_size = 64
""")

steps = [
    ["gen", "--count", "48", "--seed", "5", "--out", corpus],
    ["train", "--corpus", os.path.join(corpus, "manifest.json"),
     "--model", model, "--config", conf],
    ["detect", "--model", model, "--corpus", os.path.join(corpus, "manifest.json"),
     "--json", dets, "--config", conf],
    ["detect", "--model", model, "--image", os.path.join(corpus, "img_0000.pgm"),
     "--svg", svg, "--json", os.path.join(workdir, "one.json"), "--config", conf],
    # scored on the training images; the held-out protocol lives in the tests
    ["eval", "--pred", dets, "--gt", os.path.join(corpus, "manifest.json")],
]
for argv in steps:
    print("$ slicedet " + " ".join(argv))
    rc = main(argv)
    if rc != 0:
        raise SystemExit(rc)
    print()

print("artifacts in %s" % workdir)
print("  overlay: %s (dashed rects = proposals, solid = detections)" % svg)
