"""Command-line surface: gen / train / detect / eval, exit codes, file formats."""

import argparse
import json
import re
import shutil
import subprocess
import sys
import xml.etree.ElementTree as ET
from types import SimpleNamespace

import pytest

from slicedet.cli import DEFAULTS, main, parse_config_file, resolve_settings
from slicedet.corpus import load_manifest, read_pgm
from slicedet.errors import ConfigError, InputError

TINY_CONF = """\
# small model so training finishes in seconds
stage16_channels = 6
stage32_channels = 8
fused_channels = 6
blocks_per_stage = 1
rpn_channels = 6
rnn_hidden = 4
pool_bins = 2
head_hidden = 8
batch_size = 32
stage1_epochs = 1
stage2_epochs = 1
seed = 3
"""


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    """A generated corpus plus a (briefly) trained model, shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    conf = root / "tiny.conf"
    conf.write_text(TINY_CONF, encoding="utf-8")
    corpus = root / "corpus"
    assert main(["gen", "--count", "3", "--seed", "11", "--out", str(corpus)]) == 0
    manifest = corpus / "manifest.json"
    model = root / "model.rtnm"
    assert main(["train", "--corpus", str(manifest), "--model", str(model),
                 "--config", str(conf)]) == 0
    return SimpleNamespace(root=root, conf=conf, corpus=corpus,
                           manifest=manifest, model=model)


# -- gen --------------------------------------------------------------------


def test_gen_writes_corpus(env):
    manifest = load_manifest(env.manifest)
    assert len(manifest.entries) == 3
    for entry in manifest.entries:
        pixels = read_pgm(env.corpus / entry.path)
        assert pixels.shape == (entry.height, entry.width)
        assert entry.words


def test_gen_seed_flag_beats_config(env, tmp_path):
    outs = {}
    for name, argv in [
        ("flag5", ["gen", "--count", "2", "--seed", "5", "--out", None]),
        ("conf3", ["gen", "--count", "2", "--config", str(env.conf), "--out", None]),
        ("flag5b", ["gen", "--count", "2", "--seed", "5", "--out", None]),
        ("flag3", ["gen", "--count", "2", "--seed", "3", "--out", None]),
    ]:
        argv[-1] = str(tmp_path / name)
        assert main(argv) == 0
        outs[name] = (tmp_path / name / "manifest.json").read_bytes()
    assert outs["flag5"] == outs["flag5b"]        # same seed, same corpus
    assert outs["conf3"] == outs["flag3"]         # config seed used when flag absent
    assert outs["flag5"] != outs["conf3"]
    a = (tmp_path / "flag5" / "img_0000.pgm").read_bytes()
    b = (tmp_path / "flag5b" / "img_0000.pgm").read_bytes()
    assert a == b


def test_gen_bad_count_exits_2(tmp_path, capsys):
    assert main(["gen", "--count", "0", "--out", str(tmp_path / "c")]) == 2
    assert "count" in capsys.readouterr().err


# -- config files -----------------------------------------------------------


def test_config_parse_types_and_comments(tmp_path):
    p = tmp_path / "a.conf"
    p.write_text("# heading\n\n  seed = 9   # trailing note\nstage1_lr=0.5\n",
                 encoding="utf-8")
    assert parse_config_file(p) == {"seed": 9, "stage1_lr": 0.5}


def test_config_unknown_key_named_with_line(tmp_path):
    p = tmp_path / "a.conf"
    p.write_text("seed = 1\nbogus_key = 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=r"line 2: unknown key 'bogus_key'"):
        parse_config_file(p)


def test_config_bad_lines(tmp_path):
    p = tmp_path / "a.conf"
    p.write_text("just words\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="expected key=value"):
        parse_config_file(p)
    p.write_text("seed = banana\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="bad value for 'seed'"):
        parse_config_file(p)
    with pytest.raises(InputError, match="cannot read"):
        parse_config_file(tmp_path / "missing.conf")


def test_config_errors_exit_2(tmp_path, capsys):
    p = tmp_path / "a.conf"
    p.write_text("bogus_key = 2\n", encoding="utf-8")
    rc = main(["gen", "--count", "1", "--out", str(tmp_path / "c"),
               "--config", str(p)])
    assert rc == 2
    assert "bogus_key" in capsys.readouterr().err


def test_settings_precedence(tmp_path):
    p = tmp_path / "a.conf"
    p.write_text("seed = 9\n", encoding="utf-8")
    flagged = argparse.Namespace(config=str(p), opt_seed=99)
    assert resolve_settings(flagged)["seed"] == 99
    from_file = argparse.Namespace(config=str(p))
    assert resolve_settings(from_file)["seed"] == 9
    bare = argparse.Namespace(config=None)
    assert resolve_settings(bare)["seed"] == DEFAULTS["seed"]


# -- train ------------------------------------------------------------------


def test_train_progress_and_model_output(env, tmp_path, capsys):
    model2 = tmp_path / "m2.rtnm"
    shutil.copy(env.model, model2)
    rc = main(["train", "--corpus", str(env.manifest), "--stage", "2",
               "--epochs", "1", "--model", str(model2), "--config", str(env.conf)])
    out = capsys.readouterr().out
    assert rc == 0
    lines = out.strip().splitlines()
    assert re.fullmatch(r"epoch \d+ loss \d+\.\d{6}", lines[0])
    assert lines[-1] == "saved model to %s" % model2
    assert model2.stat().st_size == env.model.stat().st_size


def test_train_stage2_needs_stage1_model(env, tmp_path, capsys):
    rc = main(["train", "--corpus", str(env.manifest), "--stage", "2",
               "--model", str(tmp_path / "absent.rtnm"), "--config", str(env.conf)])
    assert rc == 3
    assert "stage 2 requires" in capsys.readouterr().err


def test_train_empty_corpus_exits_3(tmp_path, capsys):
    mf = tmp_path / "manifest.json"
    mf.write_text('{"version": 1, "entries": []}\n', encoding="utf-8")
    rc = main(["train", "--corpus", str(mf), "--model", str(tmp_path / "m.rtnm")])
    assert rc == 3
    assert "no entries" in capsys.readouterr().err


# -- detect -----------------------------------------------------------------


def test_detect_json_document(env, tmp_path):
    out = tmp_path / "dets.json"
    rc = main(["detect", "--model", str(env.model), "--corpus", str(env.manifest),
               "--json", str(out), "--config", str(env.conf)])
    assert rc == 0
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["version"] == 1
    assert [rec["path"] for rec in doc["images"]] == [
        "img_0000.pgm", "img_0001.pgm", "img_0002.pgm"]
    for rec in doc["images"]:
        for det in rec["detections"]:
            assert set(det) == {"x0", "y0", "x1", "y1", "score"}
            assert det["x0"] < det["x1"] and det["y0"] < det["y1"]
            assert 0.0 <= det["score"] <= 1.0


def test_detect_stdout_single_image(env, capsys):
    rc = main(["detect", "--model", str(env.model),
               "--image", str(env.corpus / "img_0001.pgm"),
               "--threshold", "0.3", "--config", str(env.conf)])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["images"]) == 1
    assert doc["images"][0]["path"].endswith("img_0001.pgm")


def test_detect_svg_overlay(env, tmp_path):
    svg_path = tmp_path / "overlay.svg"
    json_path = tmp_path / "one.json"
    image = env.corpus / "img_0000.pgm"
    rc = main(["detect", "--model", str(env.model), "--image", str(image),
               "--threshold", "0.3", "--svg", str(svg_path),
               "--json", str(json_path), "--config", str(env.conf)])
    assert rc == 0
    h, w = read_pgm(image).shape
    root = ET.parse(svg_path).getroot()
    assert root.tag == "{http://www.w3.org/2000/svg}svg"
    assert (int(root.get("width")), int(root.get("height"))) == (w, h)
    rects = list(root)
    assert all(r.tag.endswith("rect") for r in rects)
    dashed = [r for r in rects if r.get("stroke-dasharray")]
    solid = [r for r in rects if not r.get("stroke-dasharray")]
    doc = json.loads(json_path.read_text(encoding="utf-8"))
    assert len(solid) == len(doc["images"][0]["detections"])
    assert len(dashed) >= len(solid)  # every line came from >= 1 proposal
    assert len(dashed) > 0
    for r in rects:
        assert float(r.get("width")) > 0 and float(r.get("height")) > 0


def test_detect_flag_misuse_exits_2(env, tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["detect", "--model", str(env.model), "--corpus", str(env.manifest),
              "--svg", str(tmp_path / "x.svg")])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["detect", "--model", str(env.model),
              "--image", "a.pgm", "--corpus", "b.json"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["detect", "--model", str(env.model)])
    assert err.value.code == 2


def test_detect_missing_inputs(env, tmp_path, capsys):
    rc = main(["detect", "--model", str(tmp_path / "no.rtnm"),
               "--image", str(env.corpus / "img_0000.pgm")])
    assert rc == 2
    rc = main(["detect", "--model", str(env.model),
               "--image", str(tmp_path / "no.pgm"), "--config", str(env.conf)])
    assert rc == 2
    assert "cannot read" in capsys.readouterr().err


# -- eval -------------------------------------------------------------------


def test_eval_prints_prf(env, tmp_path, capsys):
    dets = tmp_path / "dets.json"
    assert main(["detect", "--model", str(env.model), "--corpus", str(env.manifest),
                 "--json", str(dets), "--config", str(env.conf)]) == 0
    capsys.readouterr()
    rc = main(["eval", "--pred", str(dets), "--gt", str(env.manifest)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    for line, name in zip(lines, ("precision", "recall", "f_measure")):
        m = re.fullmatch(r"%s (\d\.\d{6})" % name, line)
        assert m, line
        assert 0.0 <= float(m.group(1)) <= 1.0


def test_eval_mismatched_sets_exit_3(env, tmp_path, capsys):
    dets = tmp_path / "partial.json"
    doc = {"version": 1, "images": [{"path": "img_0000.pgm", "detections": []}]}
    dets.write_text(json.dumps(doc), encoding="utf-8")
    rc = main(["eval", "--pred", str(dets), "--gt", str(env.manifest)])
    assert rc == 3
    assert "image sets differ" in capsys.readouterr().err


def test_eval_bad_prediction_files(env, tmp_path, capsys):
    assert main(["eval", "--pred", str(tmp_path / "no.json"),
                 "--gt", str(env.manifest)]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert main(["eval", "--pred", str(broken), "--gt", str(env.manifest)]) == 3
    broken.write_text('{"version": 1}', encoding="utf-8")
    assert main(["eval", "--pred", str(broken), "--gt", str(env.manifest)]) == 3
    capsys.readouterr()


# -- module entry point -----------------------------------------------------


def test_python_m_invocation(tmp_path):
    out = tmp_path / "sub"
    proc = subprocess.run(
        [sys.executable, "-m", "slicedet", "gen", "--count", "2", "--seed", "4",
         "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "wrote 2 images" in proc.stdout
    assert (out / "manifest.json").exists()
    proc = subprocess.run([sys.executable, "-m", "slicedet", "frobnicate"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
