import json

import numpy as np
import pytest

from signrep.corpus import (CorpusRecord, SynthSpec, build_prototypes,
                            ingest_raw, read_corpus, read_index_map, split,
                            synth_generate, word_token, write_corpus)
from signrep.errors import (BadRatios, EmptyCorpus, MissingJoint, ParseError,
                            SchemaError)
from signrep.metrics import mpjpe

SMALL = SynthSpec(vocab_size=5, n_sentences=8, seed=3)


class TestCorpusRecord:
    def test_wrong_shape_rejected(self):
        with pytest.raises(SchemaError):
            CorpusRecord(id="x", fps=25, text="a",
                         keypoints=np.zeros((4, 70, 2)))

    def test_empty_sequence_rejected(self):
        with pytest.raises(SchemaError):
            CorpusRecord(id="x", fps=25, text="a",
                         keypoints=np.zeros((0, 73, 2)))

    def test_sequence_view(self):
        rec = CorpusRecord(id="r1", fps=30, text="a",
                           keypoints=np.ones((3, 73, 2)))
        seq = rec.sequence()
        assert seq.id == "r1" and seq.fps == 30 and seq.length == 3


class TestRoundTrip:
    def test_write_read_exact(self, tmp_path):
        records, _ = synth_generate(SMALL)
        path = tmp_path / "c.ndjson"
        write_corpus(records, path)
        back = read_corpus(path)
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert (a.id, a.fps, a.text, a.labels) == (b.id, b.fps, b.text,
                                                       b.labels)
            np.testing.assert_array_equal(a.keypoints, b.keypoints)

    def test_blank_lines_skipped(self, tmp_path):
        records, _ = synth_generate(SMALL)
        path = tmp_path / "c.ndjson"
        write_corpus(records[:2], path)
        path.write_text(path.read_text() + "\n\n")
        assert len(read_corpus(path)) == 2

    def test_parse_error_reports_line(self, tmp_path):
        records, _ = synth_generate(SMALL)
        path = tmp_path / "c.ndjson"
        write_corpus(records[:2], path)
        lines = path.read_text().splitlines()
        lines[1] = "{broken"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError, match=":2:"):
            read_corpus(path)

    def test_schema_error_missing_field(self, tmp_path):
        path = tmp_path / "c.ndjson"
        path.write_text(json.dumps({"fps": 25, "text": "a",
                                    "keypoints": [[[0, 0]] * 73]}) + "\n")
        with pytest.raises(SchemaError, match="id"):
            read_corpus(path)


class TestSynthesis:
    def test_deterministic_bitwise(self):
        a, protos_a = synth_generate(SMALL)
        b, protos_b = synth_generate(SMALL)
        for ra, rb in zip(a, b):
            assert ra.text == rb.text
            np.testing.assert_array_equal(ra.keypoints, rb.keypoints)
        for w in protos_a:
            np.testing.assert_array_equal(protos_a[w], protos_b[w])

    def test_frame_count_is_words_times_proto_len(self):
        records, _ = synth_generate(SMALL)
        for rec in records:
            words = rec.text.split()
            assert rec.labels == words
            assert rec.keypoints.shape == (15 * len(words), 73, 2)

    def test_sentence_lengths_in_range(self):
        records, _ = synth_generate(SynthSpec(vocab_size=4, n_sentences=40,
                                              sentence_len=(2, 6), seed=1))
        lengths = {len(r.text.split()) for r in records}
        assert lengths <= set(range(2, 7))
        assert len(lengths) > 1

    def test_nearest_prototype_recovers_labels(self):
        records, protos = synth_generate(SMALL)
        tokens = list(protos)
        for rec in records:
            segs = rec.keypoints.reshape(-1, 15, 73, 2)
            assert len(segs) == len(rec.labels)
            for seg, label in zip(segs, rec.labels):
                dists = [mpjpe(seg, protos[w]) for w in tokens]
                assert tokens[int(np.argmin(dists))] == label

    def test_prototype_separation_floor(self):
        spec = SynthSpec(vocab_size=8, seed=5, jitter=0.01)
        protos = build_prototypes(spec)
        toks = list(protos)
        for i, a in enumerate(toks):
            for b in toks[:i]:
                assert mpjpe(protos[a], protos[b]) >= 10 * spec.jitter

    def test_jitter_scale(self):
        spec = SynthSpec(vocab_size=3, n_sentences=4, seed=2, jitter=0.01)
        records, protos = synth_generate(spec)
        for rec in records:
            clean = np.concatenate([protos[w] for w in rec.labels], axis=0)
            resid = rec.keypoints - clean
            assert np.abs(resid).max() < 10 * spec.jitter
            assert resid.std() == pytest.approx(spec.jitter, rel=0.15)

    def test_word_token_format(self):
        assert word_token(3) == "w03"
        assert word_token(12) == "w12"

    def test_tiny_vocab_rejected(self):
        with pytest.raises(ValueError):
            synth_generate(SynthSpec(vocab_size=1))


class TestSplit:
    def test_sizes_and_partition(self):
        records, _ = synth_generate(SynthSpec(vocab_size=5, n_sentences=50,
                                              seed=4))
        train, valid, test = split(records, (0.8, 0.1, 0.1), seed=0)
        assert (len(train), len(valid), len(test)) == (40, 5, 5)
        ids = [r.id for r in train + valid + test]
        assert sorted(ids) == sorted(r.id for r in records)
        assert len(set(ids)) == 50

    def test_deterministic(self):
        records, _ = synth_generate(SMALL)
        a = split(records, (0.8, 0.1, 0.1), seed=9)
        b = split(records, (0.8, 0.1, 0.1), seed=9)
        for part_a, part_b in zip(a, b):
            assert [r.id for r in part_a] == [r.id for r in part_b]

    def test_remainder_goes_to_train(self):
        records, _ = synth_generate(SynthSpec(vocab_size=4, n_sentences=7,
                                              seed=1))
        train, valid, test = split(records, (0.6, 0.2, 0.2), seed=0)
        # floor(0.2*7) = 1 each for valid/test, train takes the rest
        assert (len(train), len(valid), len(test)) == (5, 1, 1)

    def test_bad_ratios(self):
        records, _ = synth_generate(SMALL)
        with pytest.raises(BadRatios):
            split(records, (0.5, 0.2, 0.2), seed=0)
        with pytest.raises(BadRatios):
            split(records, (1.2, -0.1, -0.1), seed=0)
        with pytest.raises(BadRatios):
            split(records, (0.5, 0.5), seed=0)


def _raw_frame(rng, n_points=137, offset=(0.0, 0.0)):
    pts = rng.uniform(100, 300, size=(n_points, 3))
    pts[:, 2] = 0.9  # confidence column, ignored by ingestion
    pts[1, :2] = (260.0 + offset[0], 200.0 + offset[1])   # right shoulder
    pts[4, :2] = (140.0 + offset[0], 200.0 + offset[1])   # left shoulder
    return pts


class TestIngest:
    @pytest.fixture()
    def index_map_path(self, tmp_path):
        path = tmp_path / "map.json"
        path.write_text(json.dumps(list(range(73))))
        return path

    def _write_raw(self, tmp_path, samples):
        path = tmp_path / "raw.ndjson"
        with open(path, "w") as fh:
            for obj in samples:
                fh.write(json.dumps(obj) + "\n")
        return path

    def test_ingest_normalizes(self, tmp_path, index_map_path, layout, rng):
        frames = [_raw_frame(rng).tolist() for _ in range(6)]
        path = self._write_raw(tmp_path, [
            {"id": "s0", "fps": 25, "text": "hello", "frames": frames}])
        records = ingest_raw(path, read_index_map(index_map_path), layout)
        assert len(records) == 1
        rec = records[0]
        assert rec.text == "hello"
        n = rec.keypoints.shape[0]
        np.testing.assert_allclose(
            rec.keypoints[:, layout.right_shoulder],
            np.tile([0.5, 0.0], (n, 1)), atol=1e-5)
        np.testing.assert_allclose(
            rec.keypoints[:, layout.left_shoulder],
            np.tile([-0.5, 0.0], (n, 1)), atol=1e-5)

    def test_spike_frame_removed(self, tmp_path, index_map_path, layout, rng):
        quiet = [_raw_frame(rng, offset=(i, 0.0)) for i in range(6)]
        quiet[3] = quiet[3] + np.array([5000.0, 5000.0, 0.0])
        path = self._write_raw(tmp_path, [
            {"id": "s0", "fps": 25, "frames": [f.tolist() for f in quiet]}])
        logs = []
        records = ingest_raw(path, read_index_map(index_map_path), layout,
                             threshold=400.0, log=logs.append)
        assert records[0].keypoints.shape[0] == 5
        assert any("noise filter removed frames [3]" in m for m in logs)

    def test_non_finite_frames_dropped(self, tmp_path, index_map_path,
                                       layout, rng):
        frames = [_raw_frame(rng) for _ in range(4)]
        frames[2][10, 0] = float("nan")
        path = self._write_raw(tmp_path, [
            {"id": "s0", "fps": 25, "frames": [f.tolist() for f in frames]}])
        logs = []
        records = ingest_raw(path, read_index_map(index_map_path), layout,
                             log=logs.append)
        assert records[0].keypoints.shape[0] == 3
        assert any("non-finite" in m for m in logs)

    def test_degenerate_sample_skipped(self, tmp_path, index_map_path,
                                       layout, rng):
        bad = _raw_frame(rng)
        bad[4, :2] = bad[1, :2]  # coincident shoulders in every frame
        good = [_raw_frame(rng).tolist() for _ in range(3)]
        path = self._write_raw(tmp_path, [
            {"id": "bad", "fps": 25, "frames": [bad.tolist()] * 3},
            {"id": "good", "fps": 25, "frames": good}])
        logs = []
        records = ingest_raw(path, read_index_map(index_map_path), layout,
                             log=logs.append)
        assert [r.id for r in records] == ["good"]
        assert any("degenerate" in m for m in logs)

    def test_nothing_usable_raises(self, tmp_path, index_map_path, layout,
                                   rng):
        bad = _raw_frame(rng)
        bad[4, :2] = bad[1, :2]
        path = self._write_raw(tmp_path, [
            {"id": "bad", "fps": 25, "frames": [bad.tolist()] * 2}])
        with pytest.raises(EmptyCorpus):
            ingest_raw(path, read_index_map(index_map_path), layout)

    def test_missing_joint(self, tmp_path, layout, rng):
        map_path = tmp_path / "map.json"
        map_path.write_text(json.dumps(list(range(64, 137))))
        frames = [_raw_frame(rng, n_points=100).tolist()]
        path = self._write_raw(tmp_path, [
            {"id": "s0", "fps": 25, "frames": frames}])
        with pytest.raises(MissingJoint):
            ingest_raw(path, read_index_map(map_path), layout)

    def test_schema_error(self, tmp_path, index_map_path, layout):
        path = self._write_raw(tmp_path, [{"id": "s0", "fps": 25}])
        with pytest.raises(SchemaError, match="frames"):
            ingest_raw(path, read_index_map(index_map_path), layout)

    def test_index_map_must_cover_layout(self, tmp_path):
        path = tmp_path / "map.json"
        path.write_text(json.dumps(list(range(70))))
        with pytest.raises(SchemaError):
            read_index_map(path)
