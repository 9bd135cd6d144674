from pathlib import Path

import pytest

from mrjl.data import (ImageRecord, parse_record_name, read_manifest,
                       scan_corpus, synthesize_mlr, validate_corpus,
                       write_manifest)
from mrjl.errors import ConfigurationError, DataError, IngestionError

from conftest import write_png


class TestScanAndManifest:
    def test_scan_finds_all_records(self, flat_corpus):
        records = scan_corpus(flat_corpus)
        assert len(records) == 4 * 2 * 2 + 3 * 2 * 2
        assert all(r.split in ("train", "gallery", "query") for r in records)
        first = records[0]
        assert (first.identity, first.camera) == (0, 0)

    def test_scan_rejects_bad_names(self, tmp_path):
        write_png(tmp_path / "train" / "notaname.png")
        with pytest.raises(IngestionError):
            scan_corpus(tmp_path)

    def test_parse_record_name(self):
        rec = parse_record_name("train/12_3_7.png", "train")
        assert (rec.identity, rec.camera, rec.split) == (12, 3, "train")

    def test_empty_root_rejected(self, tmp_path):
        (tmp_path / "train").mkdir()
        with pytest.raises(DataError):
            scan_corpus(tmp_path)

    def test_manifest_round_trip(self, tmp_path):
        records = [
            ImageRecord("train/0_0_0.png", 0, 0, "train", "HR", 1),
            ImageRecord("query/1_1_0.png", 1, 1, "query", "LR3", 3),
        ]
        path = tmp_path / "manifest.tsv"
        write_manifest(records, path)
        raw = path.read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")
        assert raw.decode().splitlines()[0] == "train/0_0_0.png\t0\t0\ttrain\tHR\t1"
        assert read_manifest(path) == records

    def test_manifest_rejects_malformed_rows(self, tmp_path):
        path = tmp_path / "manifest.tsv"
        path.write_text("only\tthree\tfields\n")
        with pytest.raises(IngestionError):
            read_manifest(path)

    def test_validate_corpus_overlap(self):
        records = [ImageRecord("train/1_0_0.png", 1, 0, "train"),
                   ImageRecord("query/1_1_0.png", 1, 1, "query")]
        with pytest.raises(DataError):
            validate_corpus(records)
        validate_corpus(records, allow_train_test_overlap=True)


class TestSynthesis:
    def test_designated_camera_gets_lr_tags(self, flat_corpus, tmp_path):
        manifest = synthesize_mlr(flat_corpus, lr_camera=1, seed=42,
                                  out_dir=tmp_path / "mlr")
        cam1 = [r for r in manifest if r.camera == 1]
        cam0 = [r for r in manifest if r.camera == 0]
        assert cam1 and cam0
        assert all(r.tag in ("LR2", "LR3", "LR4") and r.rate in (2, 3, 4) for r in cam1)
        assert all(r.tag == "HR" and r.rate == 1 for r in cam0)

    def test_untouched_camera_files_bit_identical(self, flat_corpus, tmp_path):
        out = tmp_path / "mlr"
        manifest = synthesize_mlr(flat_corpus, lr_camera=1, seed=0, out_dir=out)
        for rec in manifest:
            if rec.camera != 1:
                assert (out / rec.path).read_bytes() == \
                       (flat_corpus / rec.path).read_bytes()

    def test_rate_override_one_copies_bitwise(self, flat_corpus, tmp_path):
        out = tmp_path / "mlr"
        manifest = synthesize_mlr(flat_corpus, lr_camera=1, seed=0, out_dir=out,
                                  rate_override=1)
        for rec in manifest:
            assert (out / rec.path).read_bytes() == \
                   (flat_corpus / rec.path).read_bytes()

    def test_fixed_seed_reproducible(self, flat_corpus, tmp_path):
        m1 = synthesize_mlr(flat_corpus, 1, 42, tmp_path / "a")
        m2 = synthesize_mlr(flat_corpus, 1, 42, tmp_path / "b")
        assert m1 == m2
        assert (tmp_path / "a" / "manifest.tsv").read_bytes() == \
               (tmp_path / "b" / "manifest.tsv").read_bytes()

    def test_different_seed_differs(self, flat_corpus, tmp_path):
        m1 = synthesize_mlr(flat_corpus, 1, 1, tmp_path / "a")
        m2 = synthesize_mlr(flat_corpus, 1, 2, tmp_path / "b")
        assert [r.rate for r in m1] != [r.rate for r in m2]

    def test_replay_reproduces_rates_and_bytes(self, flat_corpus, tmp_path):
        first = synthesize_mlr(flat_corpus, 1, 42, tmp_path / "a")
        replayed = synthesize_mlr(flat_corpus, 1, seed=999, out_dir=tmp_path / "b",
                                  replay_manifest=first)
        assert [r.rate for r in first] == [r.rate for r in replayed]
        assert (tmp_path / "a" / "manifest.tsv").read_bytes() == \
               (tmp_path / "b" / "manifest.tsv").read_bytes()
        for rec in first:
            assert (tmp_path / "a" / rec.path).read_bytes() == \
                   (tmp_path / "b" / rec.path).read_bytes()

    def test_single_camera_rejected(self, tmp_path):
        root = tmp_path / "src"
        for identity in range(3):
            write_png(root / "train" / f"{identity}_0_0.png", seed=identity)
        with pytest.raises(ConfigurationError):
            synthesize_mlr(root, lr_camera=0, seed=0, out_dir=tmp_path / "out")

    def test_missing_designated_camera_rejected(self, flat_corpus, tmp_path):
        with pytest.raises(ConfigurationError):
            synthesize_mlr(flat_corpus, lr_camera=9, seed=0, out_dir=tmp_path / "out")

    def test_unreadable_file_reported_with_path(self, flat_corpus, tmp_path):
        bad = flat_corpus / "train" / "3_1_1.png"
        bad.write_bytes(b"garbage")
        with pytest.raises(IngestionError) as err:
            synthesize_mlr(flat_corpus, lr_camera=1, seed=0, out_dir=tmp_path / "out")
        assert any("3_1_1.png" in p for p in err.value.paths)

    def test_source_corpus_never_mutated(self, flat_corpus, tmp_path):
        before = {p: p.read_bytes() for p in sorted(flat_corpus.rglob("*.png"))}
        synthesize_mlr(flat_corpus, lr_camera=1, seed=5, out_dir=tmp_path / "out")
        after = {p: p.read_bytes() for p in sorted(flat_corpus.rglob("*.png"))}
        assert before == after
