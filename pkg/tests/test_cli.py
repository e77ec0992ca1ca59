"""CLI contracts: subcommands, exit codes, run records, determinism."""

import json

import numpy as np

from dereverb.cli import main
from dereverb.model import DccrnModel, ModelConfig
from dereverb.signal import WaveForm, write_wav

TINY_MODEL_OVERRIDES = [
    "num_enc_layers=2",
    "channels=4,4",
    "gru_hidden=4",
    "image_frames=8",
    "sample_rate=500",
    "frame_len=16",
    "hop=4",
    "fft_size=16",
    "epochs=1",
    "batch_size=8",
    "seed=3",
]

TINY_SYNTH_OVERRIDES = [
    "sample_rate=500",
    "duration_s=0.6",
    "t60_min=0.1",
    "t60_max=0.2",
]


def tiny_model_config():
    return ModelConfig(
        num_enc_layers=2,
        channels=(4, 4),
        gru_hidden=4,
        image_frames=8,
        sample_rate=500,
        frame_len=16,
        hop=4,
        fft_size=16,
        seed=3,
    )


def synth_args(out, n=2, seed=5):
    args = ["synth", "--n", str(n), "--seed", str(seed), "--out", str(out)]
    for ov in TINY_SYNTH_OVERRIDES:
        args += ["--set", ov]
    return args


class TestSynth:
    def test_contract(self, tmp_path, capsys):
        rc = main(synth_args(tmp_path / "d", n=4, seed=7))
        assert rc == 0
        wavs = list((tmp_path / "d").glob("*.wav"))
        assert len(wavs) == 8
        assert (tmp_path / "d" / "manifest.csv").exists()
        assert (tmp_path / "d" / "run.json").exists()
        assert "manifest" in capsys.readouterr().out

    def test_byte_identical_reruns(self, tmp_path):
        assert main(synth_args(tmp_path / "a")) == 0
        assert main(synth_args(tmp_path / "b")) == 0
        for name in ["manifest.csv", "run.json", "clean_0000.wav", "reverb_0001.wav"]:
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a.replace(b"/a", b"/x") == b.replace(b"/b", b"/x"), name

    def test_run_record_contents(self, tmp_path):
        main(synth_args(tmp_path / "d"))
        record = json.loads((tmp_path / "d" / "run.json").read_text())
        assert record["command"] == "synth"
        assert record["resolved_settings"]["sample_rate"] == 500
        assert record["outputs"]["manifest"] == "manifest.csv"


class TestTrain:
    def test_smoke(self, tmp_path, capsys):
        assert main(synth_args(tmp_path / "data", n=2)) == 0
        args = [
            "train",
            "--data", str(tmp_path / "data" / "manifest.csv"),
            "--out", str(tmp_path / "run"),
        ]
        for ov in TINY_MODEL_OVERRIDES:
            args += ["--set", ov]
        assert main(args) == 0
        assert (tmp_path / "run" / "final.ckpt").exists()
        assert (tmp_path / "run" / "loss.csv").exists()
        assert (tmp_path / "run" / "run.json").exists()
        header = (tmp_path / "run" / "loss.csv").read_text().splitlines()[0]
        assert header == "step,epoch,loss"

    def test_unknown_config_key_is_config_error(self, tmp_path, capsys):
        rc = main(
            ["train", "--data", "x.csv", "--out", str(tmp_path), "--set", "bogus=1"]
        )
        assert rc == 2
        assert "bogus" in capsys.readouterr().err

    def test_missing_manifest_is_data_error(self, tmp_path):
        args = ["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "r")]
        for ov in TINY_MODEL_OVERRIDES:
            args += ["--set", ov]
        assert main(args) == 2


class TestEnhance:
    def _checkpoint(self, tmp_path):
        model = DccrnModel(tiny_model_config())
        path = tmp_path / "model.ckpt"
        model.save(path)
        return path

    def test_roundtrip(self, tmp_path):
        ckpt = self._checkpoint(tmp_path)
        rng = np.random.default_rng(1)
        write_wav(tmp_path / "in.wav", WaveForm(0.2 * rng.standard_normal(300), 500))
        rc = main(
            ["enhance", "--ckpt", str(ckpt), "--in", str(tmp_path / "in.wav"),
             "--out", str(tmp_path / "out.wav")]
        )
        assert rc == 0
        assert (tmp_path / "out.wav").exists()
        assert (tmp_path / "out.wav.run.json").exists()

    def test_sample_rate_mismatch_names_both_rates(self, tmp_path, capsys):
        ckpt = self._checkpoint(tmp_path)
        write_wav(tmp_path / "in.wav", WaveForm(np.zeros(1000), 8000))
        rc = main(
            ["enhance", "--ckpt", str(ckpt), "--in", str(tmp_path / "in.wav"),
             "--out", str(tmp_path / "out.wav")]
        )
        assert rc == 2
        err = capsys.readouterr().err
        assert "8000" in err and "500" in err


class TestEval:
    def test_identical_dirs(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        for d in ("ref", "test"):
            (tmp_path / d).mkdir()
        for i in range(2):
            t = np.arange(2000) / 4000
            sig = 0.3 * np.sin(2 * np.pi * (200 + 50 * i) * t)
            sig += 0.01 * rng.standard_normal(2000)
            wf = WaveForm(sig, 4000)
            write_wav(tmp_path / "ref" / f"u{i}.wav", wf)
            write_wav(tmp_path / "test" / f"u{i}.wav", wf)
        rc = main(
            ["eval", "--ref-dir", str(tmp_path / "ref"), "--test-dir", str(tmp_path / "test"),
             "--out", str(tmp_path / "scores.csv")]
        )
        assert rc == 0
        lines = (tmp_path / "scores.csv").read_text().splitlines()
        assert lines[0] == "utt_id,cd,llr,fwsegsnr"
        assert lines[-1].startswith("MEAN,")
        mean = lines[-1].split(",")
        assert float(mean[1]) == 0.0 and float(mean[3]) == 35.0


class TestGradcheckCommand:
    def test_passes_with_table(self, capsys):
        rc = main(["gradcheck", "--seed", "1"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "PASS" in out and "complex_conv2d" in out


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_missing_required_flag(self, capsys):
        assert main(["synth", "--n", "2"]) == 1
