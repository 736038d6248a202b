import json

import numpy as np
import pytest

from clane.aggnorm import NormConfig, lut_dump
from clane.harness.cli import CliError, _parse_window, main
from clane.events import EventStream, encode_events
from clane.harness.io import read_features, read_manifest, write_manifest
from clane.harness.learners import LEARNERS
from clane.weights import load_network

SMALL = ["--set", "synth.num_classes=4", "--set", "synth.samples_per_class=20"]
CLIPS = ["--set", "synth.clips_per_class=3", "--set", "synth.clip_us=200000",
         "--set", "ingest.out_w=20", "--set", "ingest.out_h=20"]


def run(argv):
    return main([str(a) for a in argv])


class TestParseWindow:
    @pytest.mark.parametrize("token, us", [("40ms", 40_000), ("2000us", 2000), ("0.5s", 500_000), ("2.5ms", 2500)])
    def test_ok(self, token, us):
        assert _parse_window(token) == us

    @pytest.mark.parametrize("token", ["40", "-1ms", "0.5us", "fast"])
    def test_bad(self, token):
        with pytest.raises(CliError):
            _parse_window(token)


class TestSynthLearn:
    def test_reports_byte_identical(self, tmp_path):
        assert run(["synth", "--out", tmp_path / "d", *SMALL]) == 0
        feats = read_features(tmp_path / "d" / "features.feat")
        assert sorted(feats) == [0, 1, 2, 3] and feats[0].shape == (20, 256)
        for out in ("r1", "r2"):
            assert run(["learn", "--features", tmp_path / "d" / "features.feat", "--runs", 2,
                        "--out", tmp_path / out]) == 0
        for name in ("report.jsonl", "summary.csv", "curves.csv", "report.txt"):
            assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
        records = [json.loads(line) for line in (tmp_path / "r1" / "report.jsonl").read_text().splitlines()]
        assert len(records) == 6 * 2
        assert records[0]["run_config"]["protocol"]["runs"] == 2
        assert {r["learner"] for r in records} == set(LEARNERS)

    def test_learner_subset_and_holdout(self, tmp_path):
        assert run(["synth", "--out", tmp_path / "d", *SMALL]) == 0
        code = run(["learn", "--features", tmp_path / "d" / "features.feat", "--learner", "ncm",
                    "--runs", 1, "--set", "protocol.class_set=holdout", "--out", tmp_path / "r"])
        assert code == 0
        rec = json.loads((tmp_path / "r" / "report.jsonl").read_text())
        assert rec["learner"] == "ncm" and rec["order"] == [0]

    def test_missing_features(self, tmp_path, capsys):
        assert run(["learn", "--features", tmp_path / "nope.feat", "--out", tmp_path / "r"]) == 2
        assert "not found" in capsys.readouterr().err

    @pytest.mark.parametrize("extra", [["--set", "protocol.bogus=1"], ["--set", "protocol.shots=x"],
                                       ["--learner", "svm"], ["--config", "missing.ini"]])
    def test_usage_errors(self, tmp_path, extra):
        run(["synth", "--out", tmp_path / "d", *SMALL])
        assert run(["learn", "--features", tmp_path / "d" / "features.feat", "--out", tmp_path / "r", *extra]) == 2

    def test_corrupt_features(self, tmp_path):
        (tmp_path / "bad.feat").write_bytes(b"JUNK")
        assert run(["learn", "--features", tmp_path / "bad.feat", "--out", tmp_path / "r"]) == 2


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("clips")
    assert main(["synth", "--out", str(root), *SMALL, *CLIPS]) == 0
    return root


class TestEventCommands:
    def test_synth_clips(self, data):
        entries = read_manifest(data / "manifest.tsv")
        assert len(entries) == 12 and all(p.exists() for _, p in entries)

    def test_ingest_then_extract(self, data, tmp_path):
        assert run(["ingest", "--manifest", data / "manifest.tsv", "--out", tmp_path / "fr", *CLIPS]) == 0
        entries = read_manifest(tmp_path / "fr" / "manifest.tsv")
        assert all(p.suffix == ".frames" for _, p in entries)
        args = ["--out", tmp_path / "a.feat", *CLIPS]
        assert run(["extract", "--manifest", tmp_path / "fr" / "manifest.tsv", *args]) == 0
        args[1] = tmp_path / "b.feat"
        assert run(["extract", "--manifest", data / "manifest.tsv", *args]) == 0
        a, b = read_features(tmp_path / "a.feat"), read_features(tmp_path / "b.feat")
        assert sorted(a) == [0, 1, 2, 3]
        for c in a:
            np.testing.assert_array_equal(a[c], b[c])

    def test_extract_with_weight_files(self, data, tmp_path):
        assert run(["init-weights", "--out", tmp_path / "f.snnw", *CLIPS]) == 0
        assert run(["convert-weights", tmp_path / "f.snnw", tmp_path / "q.snnw"]) == 0
        assert load_network(tmp_path / "q.snnw").quantized
        man = data / "manifest.tsv"
        assert run(["extract", "--manifest", man, "--weights", tmp_path / "f.snnw",
                    "--out", tmp_path / "f.feat", *CLIPS]) == 0
        assert run(["extract", "--manifest", man, "--weights", tmp_path / "q.snnw",
                    "--out", tmp_path / "q.feat", *CLIPS]) == 0
        f, q = read_features(tmp_path / "f.feat"), read_features(tmp_path / "q.feat")
        for c in f:
            np.testing.assert_array_equal(f[c], q[c])
        # float features need the float weights
        assert run(["extract", "--manifest", man, "--weights", tmp_path / "q.snnw", "--out", tmp_path / "x.feat",
                    "--set", "extractor.path=float", *CLIPS]) == 2
        assert run(["extract", "--manifest", man, "--weights", tmp_path / "f.snnw", "--out", tmp_path / "x.feat",
                    "--set", "extractor.path=float", *CLIPS]) == 0

    def test_extract_drops_silent_clips(self, data, tmp_path, capsys):
        (tmp_path / "empty.evt").write_bytes(encode_events(EventStream.empty()))
        entries = read_manifest(data / "manifest.tsv") + [(9, tmp_path / "empty.evt")]
        write_manifest(tmp_path / "m.tsv", entries)
        assert run(["extract", "--manifest", tmp_path / "m.tsv", "--out", tmp_path / "x.feat", *CLIPS]) == 0
        assert 9 not in read_features(tmp_path / "x.feat")
        assert "dropped 1 clip" in capsys.readouterr().err
        write_manifest(tmp_path / "only.tsv", [(9, tmp_path / "empty.evt")])
        assert run(["extract", "--manifest", tmp_path / "only.tsv", "--out", tmp_path / "y.feat", *CLIPS]) == 2

    def test_ingest_bad_file(self, tmp_path):
        (tmp_path / "bad.evt").write_bytes(b"EVT1\x00")
        assert run(["ingest", tmp_path / "bad.evt", "--out", tmp_path / "fr"]) == 1

    def test_ingest_nothing(self, tmp_path):
        assert run(["ingest", "--out", tmp_path / "fr"]) == 2

    def test_bench(self, tmp_path):
        assert run(["bench", "--windows", "40ms,10ms", "--out", tmp_path / "b", *CLIPS]) == 0
        recs = [json.loads(line) for line in (tmp_path / "b" / "bench.jsonl").read_text().splitlines()]
        assert [r["window_us"] for r in recs] == [40_000, 10_000]
        assert recs[1]["timesteps"] == 4 * recs[0]["timesteps"]
        assert "relative to first window" in (tmp_path / "b" / "bench.txt").read_text()


class TestSmallCommands:
    def test_lut_dump(self, tmp_path):
        assert run(["lut-dump", "--out", tmp_path / "lut.csv", "--set", "norm.lut_bits=5"]) == 0
        assert (tmp_path / "lut.csv").read_text() == lut_dump(NormConfig(lut_bits=5))

    def test_write_config_round_trip(self, tmp_path):
        assert run(["write-config", "--out", tmp_path / "c.ini", "--set", "protocol.shots=3"]) == 0
        assert run(["write-config", "--config", tmp_path / "c.ini", "--out", tmp_path / "d.ini"]) == 0
        assert (tmp_path / "c.ini").read_text() == (tmp_path / "d.ini").read_text()
        assert "shots = 3" in (tmp_path / "c.ini").read_text()

    def test_convert_missing(self, tmp_path):
        assert run(["convert-weights", tmp_path / "a", tmp_path / "b"]) == 2
