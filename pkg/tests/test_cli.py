import csv
import io
import json

import numpy as np
import pytest

from speechtok import analysis, cli, dsp, fsq, synth


@pytest.fixture
def corpus(tmp_path):
    for i in range(3):
        dsp.save_wav(tmp_path / f"u{i}.wav", synth.utterance(i, duration=1.0))
    return tmp_path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_help_for_every_subcommand(capsys):
    for cmd in ("metrics", "fsq", "rates", "train-toy", "analyze-weights", "gradcheck"):
        with pytest.raises(SystemExit) as info:
            cli.main([cmd, "--help"])
        assert info.value.code == 0
        assert "--config" in capsys.readouterr().out


def test_metrics_identity_corpus(corpus, capsys):
    (corpus / "m.csv").write_text("id,ref,hyp\n" + "".join(f"p{i},u{i}.wav,u{i}.wav\n" for i in range(3)))
    code, out, _ = run(["metrics", corpus / "m.csv", "--out", corpus / "r.jsonl",
                        "--summary", corpus / "s.csv", "--workers", 1], capsys)
    assert code == 0
    recs = [json.loads(line) for line in (corpus / "r.jsonl").read_text().splitlines()]
    assert [r["id"] for r in recs] == ["p0", "p1", "p2"]
    rows = {r["statistic"]: r for r in csv.DictReader(io.StringIO((corpus / "s.csv").read_text()))}
    assert float(rows["mean"]["VDE"]) == 0.0 and float(rows["mean"]["GPE"]) == 0.0
    assert rows["n"]["F0-PCC"] == "3"


def test_metrics_empty_manifest(tmp_path, capsys):
    (tmp_path / "m.csv").write_text("id,ref,hyp\n")
    code, _, err = run(["metrics", tmp_path / "m.csv"], capsys)
    assert code == 1 and "no entries" in err


def test_metrics_partial_failure(corpus, capsys):
    (corpus / "m.jsonl").write_text(
        '{"id": "a", "ref": "u0.wav", "hyp": "u1.wav"}\n'
        '{"id": "b", "ref": "u1.wav", "hyp": "u1.wav"}\n'
        '{"id": "c", "ref": "u2.wav", "hyp": "gone.wav"}\n'
    )
    code, _, err = run(["metrics", corpus / "m.jsonl", "--out", corpus / "r.jsonl", "--workers", 1], capsys)
    recs = [json.loads(line) for line in (corpus / "r.jsonl").read_text().splitlines()]
    assert code == 2
    assert sum("metrics" in r for r in recs) == 2
    assert recs[2]["id"] == "c" and "gone.wav" in recs[2]["error"]
    assert "failed c" in err


def test_metrics_output_independent_of_workers(corpus, capsys):
    (corpus / "m.csv").write_text("id,ref,hyp\na,u0.wav,u1.wav\nb,u1.wav,u2.wav\nc,u2.wav,u0.wav\n")
    outs = []
    for n in (1, 3):
        out = corpus / f"r{n}.jsonl"
        assert run(["metrics", corpus / "m.csv", "--out", out, "--summary", corpus / f"s{n}.csv",
                    "--workers", n], capsys)[0] == 0
        outs.append((out.read_bytes(), (corpus / f"s{n}.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_metrics_duplicate_ids(corpus, capsys):
    (corpus / "m.csv").write_text("id,ref,hyp\na,u0.wav,u0.wav\na,u1.wav,u1.wav\n")
    assert run(["metrics", corpus / "m.csv"], capsys)[0] == 1


def test_config_file_and_flag_precedence(corpus, capsys, monkeypatch):
    (corpus / "m.csv").write_text("id,ref,hyp\na,u0.wav,u0.wav\n")
    cfg = corpus / "cfg.json"
    cfg.write_text(json.dumps({"metrics": {"gpe_threshold": 0.3, "workers": 1, "out": str(corpus / "c.jsonl")}}))
    args = cli.parse(["metrics", str(corpus / "m.csv"), "--config", str(cfg), "--gpe-threshold", "0.1"])
    assert args.gpe_threshold == 0.1 and args.workers == 1
    monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
    args = cli.parse(["metrics", str(corpus / "m.csv")])
    assert args.gpe_threshold == 0.3 and args.out == str(corpus / "c.jsonl")


def test_unknown_config_key_writes_nothing(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"steps": 3, "learning_rate": 0.1}))
    code, _, err = run(["train-toy", "--config", cfg, "--out-dir", tmp_path / "run"], capsys)
    assert code == 1 and "learning_rate" in err
    assert not (tmp_path / "run").exists()


def test_fsq_fixed_points_have_zero_latent_error(tmp_path, capsys):
    levels = fsq.grid(8)[1:-1]
    x = np.arctanh(np.resize(levels, (4, 64)))
    np.savetxt(tmp_path / "x.csv", x, delimiter=",", fmt="%.17g")
    code, _, err = run(["fsq", tmp_path / "x.csv", "--codes", tmp_path / "c.jsonl",
                        "--recon", tmp_path / "r.csv"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "r.csv").read_text())))
    assert all(float(r["latent_err"]) < 1e-28 for r in rows)


def test_fsq_decode_then_reencode(tmp_path, capsys):
    np.savetxt(tmp_path / "x.csv", np.random.default_rng(0).standard_normal((6, 64)), delimiter=",")
    run(["fsq", tmp_path / "x.csv", "--codes", tmp_path / "c.jsonl"], capsys)
    run(["fsq", tmp_path / "c.jsonl", "--decode", "--recon", tmp_path / "q.csv"], capsys)
    code, out, _ = run(["fsq", tmp_path / "q.csv", "--stage", "latent", "--codes", tmp_path / "c2.jsonl",
                        "--recon", tmp_path / "r2.csv"], capsys)
    assert code == 0
    assert (tmp_path / "c.jsonl").read_bytes() == (tmp_path / "c2.jsonl").read_bytes()
    rows = list(csv.DictReader(io.StringIO((tmp_path / "r2.csv").read_text())))
    assert all(float(r["latent_err"]) == 0.0 for r in rows)
    assert "bits_per_token=192" in out


def test_fsq_bits_summary_json(tmp_path, capsys):
    np.savetxt(tmp_path / "x.csv", np.ones((2, 64)), delimiter=",")
    code, out, _ = run(["fsq", tmp_path / "x.csv", "--codes", tmp_path / "c.jsonl", "--json"], capsys)
    assert code == 0 and json.loads(out)["bits_per_token"] == 192


def test_fsq_malformed_row(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("1,2\n3,4\n5,oops\n")
    code, _, err = run(["fsq", tmp_path / "x.csv", "--d", 2, "--codes", tmp_path / "c.jsonl"], capsys)
    assert code == 1 and ":3:" in err
    assert not (tmp_path / "c.jsonl").exists()


def test_rates_table(tmp_path, capsys):
    spec = [
        {"model": "EnCodec", "scheme": "rvq", "frame_rate": 75, "quantizers": 2, "codebook": 1024},
        {"model": "one-bit", "scheme": "fsq", "frame_rate": 1, "d": 1, "levels": 2},
    ]
    (tmp_path / "s.json").write_text(json.dumps(spec))
    code, out, _ = run(["rates", tmp_path / "s.json", "--json"], capsys)
    assert code == 0
    table = json.loads(out)
    assert table[0]["Bitrate"] == 1500 and table[1]["Bitrate"] == 1
    code, out, err = run(["rates"], capsys)
    assert code == 0 and "Model,Frame Rate,Bitrate" in out and "600" in err
    (tmp_path / "bad.json").write_text('[{"model": "x", "scheme": "rvq"}]')
    assert run(["rates", tmp_path / "bad.json"], capsys)[0] == 1


def test_train_toy_is_byte_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = run(["train-toy", "--steps", 4, "--T", 8, "--N", 3, "--batch", 2,
                          "--out-dir", tmp_path / name], capsys)
        assert code == 0
    for f in ("history.csv", "history.json", "checkpoint/manifest.json", "checkpoint/fsq_enc.stks"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_toy_lambda_zero(tmp_path, capsys):
    run(["train-toy", "--steps", 2, "--T", 8, "--N", 3, "--batch", 2, "--lam", 0,
         "--out-dir", tmp_path], capsys)
    for r in csv.DictReader(io.StringIO((tmp_path / "history.csv").read_text())):
        assert r["total"] == r["ce"]


def _trace_file(path, w):
    path.write_text(analysis.write_trace_csv(analysis.WeightTrace(w)))


@pytest.fixture
def wav_frames(tmp_path):
    dsp.save_wav(tmp_path / "a.wav", synth.utterance(0, duration=1.0))
    return tmp_path / "a.wav", dsp.stft_mel(dsp.load_wav(tmp_path / "a.wav")).T


def test_analyze_weights_one_hot_and_uniform(tmp_path, wav_frames, capsys):
    wav, T = wav_frames
    w = np.zeros((4, T))
    w[2] = 1.0
    _trace_file(tmp_path / "t.csv", w)
    code, out, _ = run(["analyze-weights", tmp_path / "t.csv", wav, "--frames-csv", tmp_path / "f.csv"], capsys)
    assert code == 0 and json.loads(out)["enl"] == 1.0
    assert (tmp_path / "f.csv").read_text().startswith("time,flux,w_0")
    _trace_file(tmp_path / "u.csv", np.full((4, T), 0.25))
    code, out, _ = run(["analyze-weights", tmp_path / "u.csv", wav], capsys)
    assert json.loads(out)["enl"] == pytest.approx(4.0)


def test_analyze_weights_reconciles_small_mismatch(tmp_path, wav_frames, capsys):
    wav, T = wav_frames
    flux = dsp.spectral_flux(dsp.stft_mel(dsp.load_wav(wav)))
    _trace_file(tmp_path / "t.csv", analysis.planted_flux_trace(flux[:-2]).w)
    code, out, _ = run(["analyze-weights", tmp_path / "t.csv", wav], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["frames"] == T - 2
    assert doc["flux_corr"][1] > 0.5


def test_analyze_weights_large_mismatch(tmp_path, wav_frames, capsys):
    wav, T = wav_frames
    _trace_file(tmp_path / "t.csv", np.full((2, T - 3), 0.5))
    code, _, err = run(["analyze-weights", tmp_path / "t.csv", wav], capsys)
    assert code == 1 and "frames" in err


def test_reconcile_flux_nearest_frame():
    np.testing.assert_array_equal(cli.reconcile_flux(np.arange(5.0), 3), [0.0, 2.0, 4.0])
    with pytest.raises(cli.UsageError):
        cli.reconcile_flux(np.arange(10.0), 7)


def test_gradcheck_command(capsys):
    code, out, _ = run(["gradcheck", "--trials", 1, "--only", "ce,recon", "--json"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["pass"] and set(doc["max_relative_error"]) == {"ce", "recon"}
    assert run(["gradcheck", "--only", "nope"], capsys)[0] == 1
