"""End-to-end command-line tests: every subcommand runs in-process via main()."""

import csv
import json

import numpy as np
import pytest

from sincfront import audio, cli, filters, training

FS = 4000.0

CORPUS_SECTION = {
    "n_classes": 2,
    "sample_rate": FS,
    "n_train_utterances": 4,
    "n_test_utterances": 2,
    "train_total_range": [2.0, 2.4],
    "test_duration_range": [0.5, 0.8],
    "fundamentals_hz": [120.0, 240.0],
    "seed": 9,
}

NETWORK_SECTION = {
    "n_filters": 4,
    "filter_length": 31,
    "conv_blocks": [[4, 5]],
    "pool_size": 3,
    "fc_layers": [16],
    "batch_size": 32,
    "seed": 0,
}


def _write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus + 2-epoch training run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus_cfg = _write_json(root / "corpus.json", {"corpus": CORPUS_SECTION})
    assert cli.main(["gen-corpus", "--config", corpus_cfg,
                     "--out", str(root / "corpus")]) == 0

    pool_section = dict(CORPUS_SECTION, class_offset=100, n_classes=3,
                        n_train_utterances=3,
                        fundamentals_hz=[150.0, 190.0, 260.0])
    pool_cfg = _write_json(root / "pool.json", {"corpus": pool_section})
    assert cli.main(["gen-corpus", "--config", pool_cfg,
                     "--out", str(root / "pool")]) == 0

    train_cfg = _write_json(root / "train.json", {
        "network": NETWORK_SECTION,
        "train": {"epochs": 2, "hop": 200, "no_timing": True},
    })
    assert cli.main(["train", "--config", train_cfg,
                     "--manifest", str(root / "corpus" / audio.MANIFEST_NAME),
                     "--out", str(root / "run")]) == 0
    return root


def _final_checkpoint(run_dir):
    info = json.loads((run_dir / "run_info.json").read_text())
    return run_dir / info["final_checkpoint"]


# ---------------------------------------------------------------------------
# gen-corpus
# ---------------------------------------------------------------------------

def test_gen_corpus_outputs(workspace, capsys):
    manifest = workspace / "corpus" / audio.MANIFEST_NAME
    entries = audio.load_manifest(manifest)
    assert len(entries) == 2 * (4 + 2)
    assert {e["split"] for e in entries} == {"train", "test"}
    echo = json.loads((workspace / "corpus" / "config.json").read_text())
    assert echo["command"] == "gen-corpus"
    assert echo["corpus"]["n_classes"] == 2
    assert not (workspace / "corpus" / ".lock").exists()


def test_gen_corpus_rerun_is_byte_identical(tmp_path):
    cfg = _write_json(tmp_path / "c.json", {"corpus": CORPUS_SECTION})
    for d in ["a", "b"]:
        assert cli.main(["gen-corpus", "--config", cfg,
                         "--out", str(tmp_path / d)]) == 0
    wavs = sorted(p.relative_to(tmp_path / "a")
                  for p in (tmp_path / "a").rglob("*.wav"))
    assert wavs
    for rel in wavs:
        assert (tmp_path / "a" / rel).read_bytes() \
            == (tmp_path / "b" / rel).read_bytes()


def test_gen_corpus_seed_flag_overrides(tmp_path):
    cfg = _write_json(tmp_path / "c.json", {"corpus": CORPUS_SECTION})
    assert cli.main(["gen-corpus", "--config", cfg, "--seed", "77",
                     "--out", str(tmp_path / "s")]) == 0
    echo = json.loads((tmp_path / "s" / "config.json").read_text())
    assert echo["corpus"]["seed"] == 77


def test_gen_corpus_invalid_spec_fails(tmp_path, capsys):
    bad = dict(CORPUS_SECTION, resonances_hz=[[5000.0], [400.0]])
    cfg = _write_json(tmp_path / "bad.json", {"corpus": bad})
    assert cli.main(["gen-corpus", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: invalid-spec:")
    assert "resonance" in err


def test_config_rejects_unknown_sections_and_keys(tmp_path, capsys):
    cfg = _write_json(tmp_path / "s.json",
                      {"corpus": CORPUS_SECTION, "mystery": {}})
    assert cli.main(["gen-corpus", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 1
    assert "mystery" in capsys.readouterr().err

    cfg = _write_json(tmp_path / "k.json",
                      {"corpus": dict(CORPUS_SECTION, volume=3)})
    assert cli.main(["gen-corpus", "--config", cfg,
                     "--out", str(tmp_path / "y")]) == 1
    assert "volume" in capsys.readouterr().err


def test_config_toml_equals_json(tmp_path):
    toml_text = """
[corpus]
n_classes = 2
sample_rate = 4000.0
n_train_utterances = 4
n_test_utterances = 2
train_total_range = [2.0, 2.4]
test_duration_range = [0.5, 0.8]
fundamentals_hz = [120.0, 240.0]
seed = 9
"""
    (tmp_path / "c.toml").write_text(toml_text)
    json_cfg = _write_json(tmp_path / "c.json", {"corpus": CORPUS_SECTION})
    assert cli.main(["gen-corpus", "--config", str(tmp_path / "c.toml"),
                     "--out", str(tmp_path / "t")]) == 0
    assert cli.main(["gen-corpus", "--config", json_cfg,
                     "--out", str(tmp_path / "j")]) == 0
    for rel in sorted(p.relative_to(tmp_path / "t")
                      for p in (tmp_path / "t").rglob("*.wav")):
        assert (tmp_path / "t" / rel).read_bytes() \
            == (tmp_path / "j" / rel).read_bytes()


def test_config_parse_failure_is_format_error(tmp_path, capsys):
    (tmp_path / "broken.json").write_text("{nope")
    assert cli.main(["gen-corpus", "--config", str(tmp_path / "broken.json"),
                     "--out", str(tmp_path / "x")]) == 1
    assert capsys.readouterr().err.startswith("error: format:")
    assert cli.main(["gen-corpus", "--config", str(tmp_path / "absent.json"),
                     "--out", str(tmp_path / "y")]) == 1
    assert capsys.readouterr().err.startswith("error: format:")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_outputs(workspace, capsys):
    run = workspace / "run"
    info = json.loads((run / "run_info.json").read_text())
    assert info["frontend"] == "sinc"
    assert info["first_layer_params"] == 8            # 4 filters x 2 cutoffs
    assert (run / "ckpt_epoch0000.npz").exists()
    assert (run / info["final_checkpoint"]).exists()
    log = training.read_log(run / "log.csv")
    assert [r.epoch for r in log] == [1, 2]
    echo = json.loads((run / "config.json").read_text())
    assert echo["network"]["frontend"] == "sinc"
    assert echo["train"]["epochs"] == 2


def test_train_conv_frontend_flag(workspace, tmp_path, capsys):
    cfg = _write_json(tmp_path / "t.json", {"network": NETWORK_SECTION})
    assert cli.main(["train", "--config", cfg, "--frontend", "conv",
                     "--manifest", str(workspace / "corpus" / audio.MANIFEST_NAME),
                     "--out", str(tmp_path / "conv"),
                     "--epochs", "1", "--hop", "200", "--no-timing"]) == 0
    out = capsys.readouterr().out
    assert "frontend=conv" in out
    assert "first_layer_params=124" in out            # 4 filters x 31 taps
    info = json.loads((tmp_path / "conv" / "run_info.json").read_text())
    assert info["first_layer_params"] == 124


def test_train_zero_epochs(workspace, tmp_path):
    cfg = _write_json(tmp_path / "t.json", {"network": NETWORK_SECTION})
    assert cli.main(["train", "--config", cfg,
                     "--manifest", str(workspace / "corpus" / audio.MANIFEST_NAME),
                     "--out", str(tmp_path / "z"), "--epochs", "0"]) == 0
    assert (tmp_path / "z" / "ckpt_epoch0000.npz").exists()
    assert training.read_log(tmp_path / "z" / "log.csv") == []


def test_train_missing_manifest_fails(tmp_path, capsys):
    assert cli.main(["train", "--manifest", str(tmp_path / "nope.jsonl"),
                     "--out", str(tmp_path / "x")]) == 1
    assert capsys.readouterr().err.startswith("error: format:")


def test_train_unknown_train_key_fails(workspace, tmp_path, capsys):
    cfg = _write_json(tmp_path / "t.json",
                      {"network": NETWORK_SECTION, "train": {"warmup": 5}})
    assert cli.main(["train", "--config", cfg,
                     "--manifest", str(workspace / "corpus" / audio.MANIFEST_NAME),
                     "--out", str(tmp_path / "x")]) == 1
    assert "warmup" in capsys.readouterr().err


def test_locked_output_directory_fails(workspace, tmp_path, capsys):
    out = tmp_path / "busy"
    out.mkdir()
    (out / ".lock").touch()
    cfg = _write_json(tmp_path / "c.json", {"corpus": CORPUS_SECTION})
    assert cli.main(["gen-corpus", "--config", cfg, "--out", str(out)]) == 1
    assert capsys.readouterr().err.startswith("error: locked:")
    (out / ".lock").unlink()
    assert cli.main(["gen-corpus", "--config", cfg, "--out", str(out)]) == 0


# ---------------------------------------------------------------------------
# inspect-filters
# ---------------------------------------------------------------------------

def test_inspect_filters_fresh_sinc_matches_mel_init(workspace, tmp_path):
    ckpt = workspace / "run" / "ckpt_epoch0000.npz"
    assert cli.main(["inspect-filters", "--checkpoint", str(ckpt),
                     "--out", str(tmp_path / "f"), "--n-points", "512"]) == 0

    with open(tmp_path / "f" / "bank.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["f1_abs_hz", "f2_abs_hz"]
    assert len(rows) == 1 + 4                          # header + one per filter
    assert len(rows[0]) == 2 + 31
    expected = filters.constrain_cutoffs(
        filters.mel_init_cutoffs(4, FS)) * FS
    got = np.array([[float(r[0]), float(r[1])] for r in rows[1:]])
    assert np.max(np.abs(got - expected)) < 1e-6

    with open(tmp_path / "f" / "response.csv", newline="") as fh:
        rrows = list(csv.reader(fh))
    assert rrows[0] == ["freq_hz"] + [f"resp_{i}" for i in range(4)] \
        + ["cumulative", "cumulative_norm"]
    assert len(rrows) == 1 + 512
    body = np.array([[float(v) for v in r] for r in rrows[1:]])
    assert body[0, 0] == 0.0
    assert body[-1, 0] == pytest.approx(FS / 2, rel=1e-9)
    assert np.max(body[:, -1]) == pytest.approx(1.0, abs=1e-12)
    # cumulative column really is the per-filter sum
    assert np.allclose(body[:, 1:5].sum(axis=1), body[:, 5], atol=1e-9)

    payload = json.loads((tmp_path / "f" / "bank.json").read_text())
    assert len(payload["filters"]) == 4
    assert len(payload["cumulative"]) == 512


def test_inspect_filters_conv_has_no_cutoffs(workspace, tmp_path):
    cfg = _write_json(tmp_path / "t.json", {"network": NETWORK_SECTION})
    assert cli.main(["train", "--config", cfg, "--frontend", "conv",
                     "--manifest", str(workspace / "corpus" / audio.MANIFEST_NAME),
                     "--out", str(tmp_path / "r"), "--epochs", "0"]) == 0
    assert cli.main(["inspect-filters",
                     "--checkpoint", str(tmp_path / "r" / "ckpt_epoch0000.npz"),
                     "--out", str(tmp_path / "f")]) == 0
    with open(tmp_path / "f" / "bank.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == [f"tap_{i}" for i in range(31)]


def test_inspect_filters_missing_checkpoint(tmp_path, capsys):
    assert cli.main(["inspect-filters", "--checkpoint", str(tmp_path / "no.npz"),
                     "--out", str(tmp_path / "f")]) == 1
    assert capsys.readouterr().err.startswith("error: checkpoint:")


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def test_verify_disjoint_pool(workspace, tmp_path, capsys):
    ckpt = _final_checkpoint(workspace / "run")
    pool = str(workspace / "pool" / audio.MANIFEST_NAME)
    assert cli.main(["verify", "--checkpoint", str(ckpt),
                     "--enroll-manifest", pool, "--trial-manifest", pool,
                     "--out", str(tmp_path / "v"), "--seed", "0"]) == 0
    report = json.loads((tmp_path / "v" / "report.json").read_text())
    assert set(report) == {"eer_pct", "n_genuine", "n_impostor", "threshold"}
    assert report["n_genuine"] == 3 * 2                # test utterances in pool
    assert report["n_impostor"] == report["n_genuine"] * 10
    assert 0.0 <= report["eer_pct"] <= 100.0
    scored = training.read_trial_scores(tmp_path / "v" / "scores.csv")
    assert len(scored) == report["n_genuine"] + report["n_impostor"]
    eer, thr = training.equal_error_rate(scored)
    assert eer == report["eer_pct"] and thr == report["threshold"]
    assert f"EER {report['eer_pct']:.2f}%" in capsys.readouterr().out


def test_verify_is_deterministic(workspace, tmp_path):
    ckpt = _final_checkpoint(workspace / "run")
    pool = str(workspace / "pool" / audio.MANIFEST_NAME)
    for d in ["a", "b"]:
        assert cli.main(["verify", "--checkpoint", str(ckpt),
                         "--enroll-manifest", pool, "--trial-manifest", pool,
                         "--out", str(tmp_path / d), "--seed", "3"]) == 0
    assert (tmp_path / "a" / "scores.csv").read_bytes() \
        == (tmp_path / "b" / "scores.csv").read_bytes()


def test_verify_n_impostors_flag(workspace, tmp_path):
    ckpt = _final_checkpoint(workspace / "run")
    pool = str(workspace / "pool" / audio.MANIFEST_NAME)
    assert cli.main(["verify", "--checkpoint", str(ckpt),
                     "--enroll-manifest", pool, "--trial-manifest", pool,
                     "--out", str(tmp_path / "v"), "--n-impostors", "4"]) == 0
    report = json.loads((tmp_path / "v" / "report.json").read_text())
    assert report["n_impostor"] == report["n_genuine"] * 4


def test_verify_refuses_training_speakers(workspace, tmp_path, capsys):
    ckpt = _final_checkpoint(workspace / "run")
    train_manifest = str(workspace / "corpus" / audio.MANIFEST_NAME)
    assert cli.main(["verify", "--checkpoint", str(ckpt),
                     "--enroll-manifest", train_manifest,
                     "--trial-manifest", train_manifest,
                     "--out", str(tmp_path / "v")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: invalid-label:")
    assert "[0, 1]" in err                             # names the overlap


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def test_eval_test_split(workspace, tmp_path, capsys):
    ckpt = _final_checkpoint(workspace / "run")
    assert cli.main(["eval", "--checkpoint", str(ckpt),
                     "--manifest", str(workspace / "corpus" / audio.MANIFEST_NAME),
                     "--out", str(tmp_path / "e"), "--hop", "200"]) == 0
    report = json.loads((tmp_path / "e" / "eval.json").read_text())
    assert set(report) == {"fer_pct", "cer_pct", "n_chunks", "n_utterances", "split"}
    assert report["split"] == "test"
    assert report["n_utterances"] == 4
    assert 0.0 <= report["fer_pct"] <= 100.0
    assert 0.0 <= report["cer_pct"] <= 100.0
    assert "FER" in capsys.readouterr().out


def test_eval_train_split(workspace, tmp_path):
    ckpt = _final_checkpoint(workspace / "run")
    assert cli.main(["eval", "--checkpoint", str(ckpt),
                     "--manifest", str(workspace / "corpus" / audio.MANIFEST_NAME),
                     "--out", str(tmp_path / "e"), "--split", "train"]) == 0
    report = json.loads((tmp_path / "e" / "eval.json").read_text())
    assert report["split"] == "train"
    assert report["n_utterances"] == 8


def test_eval_foreign_labels_fail(workspace, tmp_path, capsys):
    ckpt = _final_checkpoint(workspace / "run")
    assert cli.main(["eval", "--checkpoint", str(ckpt),
                     "--manifest", str(workspace / "pool" / audio.MANIFEST_NAME),
                     "--out", str(tmp_path / "e")]) == 1
    assert capsys.readouterr().err.startswith("error: invalid-label:")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def test_main_requires_subcommand(capsys):
    with pytest.raises(SystemExit):
        cli.main([])
    with pytest.raises(SystemExit):
        cli.main(["train"])                            # missing required flags
