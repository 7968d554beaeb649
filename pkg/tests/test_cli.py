import json

import numpy as np
import pytest

from qcremix.audio import AudioBuffer, load_wav, save_wav
from qcremix.cli import main
from qcremix.datagen.synthetic import synthetic_background, synthetic_speech
from qcremix.nn import NetworkConfig, build_network, save_checkpoint

from .conftest import white_noise_at_snr

TRAIN_FLAGS = ["--epochs", "2", "--batch", "8", "--front-filters", "4", "--block-filters", "4",
               "--dense-units", "8,8", "--seed", "3"]


def _report(path):
    lines = [json.loads(s) for s in path.read_text().splitlines()]
    assert lines[0]["record"] == "header" and "config_hash" in lines[0] and "seed" in lines[0]
    return lines[1:]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    stems = root / "stems"
    (stems / "speech").mkdir(parents=True)
    (stems / "background").mkdir()
    save_wav(AudioBuffer(synthetic_speech(8.0, seed=41)), stems / "speech" / "s1.wav", 16)
    save_wav(AudioBuffer(synthetic_speech(4.0, seed=42)), stems / "speech" / "s2.wav", 16)
    save_wav(AudioBuffer(synthetic_background(4.0, seed=43)), stems / "background" / "b.wav", 16)
    ref = synthetic_speech(4.0, seed=44)
    save_wav(AudioBuffer(ref), root / "ref.wav", 32)
    save_wav(AudioBuffer(ref + white_noise_at_snr(ref, 10.0, 1)), root / "probe.wav", "float32")
    return root


@pytest.fixture(scope="module")
def corpus(workspace):
    outs = []
    for k in (1, 2):
        out = workspace / f"corpus{k}"
        assert main(["synth", str(workspace / "stems"), str(out), "--silence-seconds", "4", "--seed", "9",
                     "--report", str(workspace / f"synth{k}.jsonl")]) == 0
        outs.append(out)
    return outs


@pytest.fixture(scope="module")
def trained(workspace, corpus):
    ckpts = []
    for k in (1, 2):
        ck = workspace / f"model{k}.ckpt"
        assert main(["train", str(corpus[0] / "manifest.jsonl"), "--out", str(ck), "-v", "n", *TRAIN_FLAGS]) == 0
        ckpts.append(ck)
    return ckpts


class TestScore2f:
    def test_identical_probe_is_maximal(self, workspace, capsys):
        rep = workspace / "same.jsonl"
        assert main(["score-2f", str(workspace / "ref.wav"), str(workspace / "ref.wav"), "--report", str(rep)]) == 0
        (rec,) = _report(rep)
        assert rec["value"] == 100.0
        assert "score 100.000" in capsys.readouterr().out

    def test_noisy_probe_report(self, workspace):
        rep = workspace / "noisy.jsonl"
        assert main(["score-2f", str(workspace / "ref.wav"), str(workspace / "probe.wav"), "--report", str(rep)]) == 0
        (rec,) = _report(rep)
        assert 0.0 <= rec["value"] < 100.0

    def test_missing_file(self, workspace, capsys):
        missing = workspace / "absent.wav"
        assert main(["score-2f", str(missing), str(workspace / "probe.wav")]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_format_error(self, workspace):
        bad = workspace / "bad.wav"
        bad.write_bytes(b"RIFF0000WAVEjunk")
        assert main(["score-2f", str(bad), str(workspace / "probe.wav")]) == 3

    def test_misaligned(self, workspace):
        short = workspace / "short.wav"
        save_wav(AudioBuffer(np.zeros(1000)), short, 16)
        assert main(["score-2f", str(workspace / "ref.wav"), str(short)]) == 3

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["score-2f"])
        assert exc.value.code == 64


class TestFeatures:
    def test_records(self, workspace):
        rep = workspace / "feat.jsonl"
        assert main(["features", str(workspace / "ref.wav"), str(workspace / "probe.wav"), "--report", str(rep)]) == 0
        (rec,) = _report(rep)
        assert {"adb", "avg_mod_diff_1", "channel", "offset"} <= rec.keys()


class TestSynthTrainPredict:
    def test_synth_deterministic(self, corpus):
        a, b = (c / "manifest.jsonl" for c in corpus)
        assert a.read_bytes() == b.read_bytes()
        rows = [json.loads(s) for s in a.read_text().splitlines()]
        assert len(rows) == 3 * 15 + 1
        assert all(0.0 <= r["label"] <= 100.0 for r in rows)

    def test_synth_empty_stems(self, tmp_path):
        (tmp_path / "s" / "speech").mkdir(parents=True)
        (tmp_path / "s" / "background").mkdir()
        assert main(["synth", str(tmp_path / "s"), str(tmp_path / "o")]) == 5

    def test_train_deterministic(self, trained):
        a, b = trained
        assert a.read_bytes() == b.read_bytes()
        log = [json.loads(s) for s in (a.parent / (a.name + ".log.jsonl")).read_text().splitlines()]
        assert [r["epoch"] for r in log] == [1, 2]

    def test_train_empty_manifest(self, tmp_path):
        (tmp_path / "m.jsonl").write_text("")
        assert main(["train", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "x.ckpt")]) == 5

    def test_predict_deterministic(self, workspace, corpus, trained):
        reports = []
        for k in (1, 2):
            rep = workspace / f"pred{k}.jsonl"
            assert main(["predict", str(trained[0]), "-v", "n", "--manifest", str(corpus[0] / "manifest.jsonl"),
                         "--report", str(rep)]) == 0
            reports.append(rep)
        body = [s for s in reports[0].read_text().splitlines()[1:]]
        assert body == reports[1].read_text().splitlines()[1:]
        recs = _report(reports[0])
        assert len(recs) == 46 and all(0 <= r["q_hat"] <= 100 for r in recs)

    def test_predict_variant_mismatch(self, workspace, trained):
        assert main(["predict", str(trained[0]), str(workspace / "probe.wav"), "-v", "r"]) == 4

    def test_reference_free_with_reference(self, workspace, trained):
        assert main(["predict", str(trained[0]), str(workspace / "probe.wav"), str(workspace / "ref.wav"),
                     "-v", "r"]) == 64

    def test_eval_round_trip(self, workspace, corpus):
        rows = [json.loads(s) for s in (corpus[0] / "manifest.jsonl").read_text().splitlines()]
        perfect = workspace / "perfect.jsonl"
        perfect.write_text("".join(json.dumps({"item_id": r["item_id"], "q_hat": r["label"]}) + "\n" for r in rows))
        rep = workspace / "eval.jsonl"
        assert main(["eval", str(perfect), str(corpus[0] / "manifest.jsonl"), "--report", str(rep)]) == 0
        (rec,) = _report(rep)
        assert (rec["pearson"], rec["slope"], rec["mae"], rec["rmse"]) == (1.0, 1.0, 0.0, 0.0)

    def test_eval_join_failure(self, workspace, corpus):
        extra = workspace / "extra.jsonl"
        extra.write_text(json.dumps({"item_id": "nope", "q_hat": 1.0}) + "\n")
        assert main(["eval", str(extra), str(corpus[0] / "manifest.jsonl")]) == 6


@pytest.fixture
def constant_checkpoint(tmp_path):
    net = build_network(NetworkConfig(input_channels=2).reduced(front_filters=4, block_filters=4,
                                                                dense_units=(8, 8)), seed=0)
    for name, layer, key in net.parameters():
        if not name.endswith("norm.gamma"):
            layer.params[key][:] = 0.0
    net.layer("output.linear").params["bias"][:] = 50.0
    path = tmp_path / "const.ckpt"
    save_checkpoint(net, path)
    return path


class TestRemix:
    def test_constant_prediction(self, workspace, constant_checkpoint, tmp_path):
        rep = tmp_path / "p.jsonl"
        assert main(["predict", str(constant_checkpoint), str(workspace / "probe.wav"), str(workspace / "ref.wav"),
                     "--report", str(rep)]) == 0
        (rec,) = _report(rep)
        assert rec["q_hat"] == 50.0

    def test_separated_equals_mixture(self, workspace, constant_checkpoint, tmp_path):
        # probe.wav is float32, the default output format, so the round trip is lossless
        out = tmp_path / "y.wav"
        mix = workspace / "probe.wav"
        assert main(["remix", str(mix), str(mix), "--checkpoint", str(constant_checkpoint), "--out", str(out)]) == 0
        np.testing.assert_array_equal(load_wav(out).samples, load_wav(mix).samples)

    def test_k_offset(self, workspace, tmp_path):
        gains = {}
        for k in ("0", "-6"):
            rep = tmp_path / f"r{k}.jsonl"
            assert main(["remix", str(workspace / "probe.wav"), str(workspace / "ref.wav"), "--q-hat", "60",
                         "--k", k, "--out", str(tmp_path / f"y{k}.wav"), "--report", str(rep)]) == 0
            gains[k] = _report(rep)[0]["g_db"]
        assert gains["0"] == pytest.approx(14.33, abs=1e-9)
        assert gains["-6"] == pytest.approx(gains["0"] - 6.0, abs=1e-9)

    @pytest.mark.parametrize("q", ["0", "100", "37.5"])
    def test_gain_clamped(self, workspace, tmp_path, q):
        rep = tmp_path / "r.jsonl"
        assert main(["remix", str(workspace / "probe.wav"), str(workspace / "ref.wav"), "--q-hat", q,
                     "--k", "plus12", "--out", str(tmp_path / "y.wav"), "--report", str(rep)]) == 0
        assert 4.0 <= _report(rep)[0]["g_db"] <= 26.0

    def test_misaligned(self, workspace, tmp_path):
        short = tmp_path / "short.wav"
        save_wav(AudioBuffer(np.zeros(1000)), short, 16)
        assert main(["remix", str(workspace / "probe.wav"), str(short), "--q-hat", "50",
                     "--out", str(tmp_path / "y.wav")]) == 3

    def test_config_file_then_flags(self, workspace, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[remix]\npreset = initial\nk = -6\n")
        rep = tmp_path / "r.jsonl"
        args = ["remix", str(workspace / "probe.wav"), str(workspace / "ref.wav"), "--q-hat", "60",
                "--config", str(cfg), "--out", str(tmp_path / "y.wav"), "--report", str(rep)]
        assert main(args) == 0
        assert _report(rep)[0]["g_db"] == pytest.approx(20.32 - 6, abs=1e-9)
        assert main(args + ["--k", "0"]) == 0
        assert _report(rep)[0]["g_db"] == pytest.approx(20.32, abs=1e-9)
