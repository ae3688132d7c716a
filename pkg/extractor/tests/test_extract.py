import json

import numpy as np
import pytest
from PIL import Image

from mmextract.cli import main
from mmextract.encoders import StubEncoder, prepare_image
from mmextract.extract import extract
from mmextract.manifest import RawSample, read_manifest


def paint(path, color, size=(60, 40)):
    Image.new("RGB", size, color).save(path)
    return str(path)


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "imgs"
    d.mkdir()
    return d


def write_csv_manifest(path, rows):
    lines = ["id,image_path,text,labels"]
    for row in rows:
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    return path


def test_prepare_image_resizes_square(image_dir):
    path = paint(image_dir / "a.png", (200, 10, 10), size=(123, 57))
    with Image.open(path) as img:
        out = prepare_image(img)
    assert out.size == (224, 224)
    assert out.mode == "RGB"


def test_manifest_csv_and_jsonl(tmp_path, image_dir):
    img = paint(image_dir / "a.png", (1, 2, 3))
    csv_path = write_csv_manifest(tmp_path / "m.csv",
                                  [("s1", img, "hello world", "1;0"),
                                   ("s2", img, "more text", "0;1")])
    samples = read_manifest(csv_path)
    assert samples[0] == RawSample("s1", img, "hello world", (1, 0))

    jsonl_path = tmp_path / "m.jsonl"
    jsonl_path.write_text(json.dumps({"id": "s1", "image_path": img,
                                      "text": "hi", "labels": [1, 0]}) + "\n")
    assert read_manifest(jsonl_path)[0].labels == (1, 0)

    with pytest.raises(FileNotFoundError):
        read_manifest(tmp_path / "missing.csv")
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"id": "x", "text": "no image"}) + "\n")
    with pytest.raises(ValueError, match="image_path"):
        read_manifest(bad)


def test_extract_writes_vectors_in_input_order(tmp_path, image_dir):
    samples = [
        RawSample("z-last", paint(image_dir / "a.png", (9, 9, 9)), "one", (1, 0)),
        RawSample("a-first", paint(image_dir / "b.png", (0, 200, 0)), "two", (0, 1)),
    ]
    out = tmp_path / "f.mmf1"
    stats = extract(samples, StubEncoder(16), out)
    assert stats.written == 2 and not stats.skipped_ids

    semimm_data = pytest.importorskip("semimm.data")
    records = semimm_data.read_features(out)
    assert [r.id for r in records] == ["z-last", "a-first"]
    assert records[0].f_image.shape == (16,)
    assert np.array_equal(records[0].labels, [1, 0])


def test_same_input_twice_identical_checksum(tmp_path, image_dir):
    img = paint(image_dir / "a.png", (10, 20, 30))
    samples = [RawSample("s1", img, "caption here", None)]
    extract(samples, StubEncoder(32), tmp_path / "one.mmf1")
    extract(samples, StubEncoder(32), tmp_path / "two.mmf1")
    assert (tmp_path / "one.mmf1").read_bytes() == (tmp_path / "two.mmf1").read_bytes()


def test_duplicate_image_different_captions(tmp_path, image_dir):
    img = paint(image_dir / "same.png", (5, 5, 5))
    samples = [RawSample("a", img, "first caption", None),
               RawSample("b", img, "second caption", None)]
    out = tmp_path / "f.mmf1"
    extract(samples, StubEncoder(24), out)
    semimm_data = pytest.importorskip("semimm.data")
    records = semimm_data.read_features(out)
    assert np.array_equal(records[0].f_image, records[1].f_image)
    assert not np.array_equal(records[0].f_text, records[1].f_text)


def test_unreadable_image_skipped_and_logged(tmp_path, image_dir, caplog):
    good = paint(image_dir / "ok.png", (0, 0, 200))
    broken = image_dir / "broken.png"
    broken.write_bytes(b"not an image at all")
    samples = [RawSample("ok", good, "fine", None),
               RawSample("bad", str(broken), "nope", None),
               RawSample("gone", str(image_dir / "missing.png"), "nope", None)]
    out = tmp_path / "f.mmf1"
    with caplog.at_level("WARNING", logger="mmextract"):
        stats = extract(samples, StubEncoder(8), out)
    assert stats.written == 1
    assert stats.skipped_ids == ["bad", "gone"]
    assert "bad" in caplog.text and "gone" in caplog.text


def test_zero_successful_samples_is_an_error(tmp_path, image_dir):
    samples = [RawSample("x", str(image_dir / "nope.png"), "text", None)]
    with pytest.raises(RuntimeError, match="no readable samples"):
        extract(samples, StubEncoder(8), tmp_path / "f.mmf1")


def test_mixed_labels_rejected(tmp_path, image_dir):
    img = paint(image_dir / "a.png", (1, 1, 1))
    samples = [RawSample("a", img, "t", (1,)), RawSample("b", img, "t", None)]
    with pytest.raises(ValueError, match="labels"):
        extract(samples, StubEncoder(8), tmp_path / "f.mmf1")


def test_cli_end_to_end_stub_backend(tmp_path, image_dir, capsys):
    rows = [(f"s{i}", paint(image_dir / f"{i}.png", (i * 20, 10, 10)),
             f"caption {i}", "1;0" if i % 2 else "0;1") for i in range(5)]
    manifest = write_csv_manifest(tmp_path / "m.csv", rows)
    out = tmp_path / "features.mmf1"
    assert main(["--input", str(manifest), "--output", str(out),
                 "--backend", "stub", "--dim", "768"]) == 0
    assert "5 records" in capsys.readouterr().out

    semimm_data = pytest.importorskip("semimm.data")
    records = semimm_data.read_features(out)
    assert len(records) == 5
    for rec in records:
        assert rec.f_image.shape == (768,) and rec.f_text.shape == (768,)
        assert np.isfinite(rec.f_image).all() and np.isfinite(rec.f_text).all()
        assert rec.id


def test_cli_zero_samples_nonzero_exit(tmp_path, capsys):
    manifest = tmp_path / "m.jsonl"
    manifest.write_text(json.dumps({"id": "x", "image_path": "/nope.png",
                                    "text": "t"}) + "\n")
    assert main(["--input", str(manifest), "--output",
                 str(tmp_path / "f.mmf1"), "--backend", "stub"]) == 1
    assert "no readable samples" in capsys.readouterr().err


def test_cli_missing_manifest(tmp_path, capsys):
    assert main(["--input", str(tmp_path / "none.csv"), "--output",
                 str(tmp_path / "f.mmf1"), "--backend", "stub"]) == 1
    assert "not found" in capsys.readouterr().err
