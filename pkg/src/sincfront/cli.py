"""Command-line surface: corpus generation, training, filter inspection,
speaker verification, and classification evaluation.

Every command takes a declarative config (TOML or JSON, sections corpus /
network / train) plus a handful of override flags, writes its outputs and a
materialized config echo into --out, and is deterministic given config and
seed. Failures exit nonzero with a one-line `error: <category>: <reason>`.
"""

import argparse
import csv
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:          # Python < 3.11
    import tomli as tomllib

from . import audio, filters, nn, sinc_layer, training
from .errors import (
    FormatError,
    InvalidLabelError,
    InvalidSpecError,
    LockError,
    SincFrontError,
)

CONFIG_SECTIONS = ("corpus", "network", "train")
TRAIN_SECTION_KEYS = ("epochs", "eval_every", "seed", "hop", "no_timing")
CONFIG_ECHO_NAME = "config.json"
LOCK_NAME = ".lock"


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    """Parse a TOML or JSON experiment config and reject unknown sections."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such config file: {path}")
    raw = path.read_bytes()
    suffix = path.suffix.lower()
    if suffix == ".json":
        parsers = [("JSON", json.loads)]
    elif suffix == ".toml":
        parsers = [("TOML", tomllib.loads)]
    else:
        parsers = [("JSON", json.loads), ("TOML", tomllib.loads)]
    config = None
    reasons = []
    for name, parse in parsers:
        try:
            config = parse(raw.decode())
            break
        except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            reasons.append(f"{name}: {exc}")
    if config is None:
        raise FormatError(f"{path} is neither valid JSON nor TOML ({'; '.join(reasons)})")
    if not isinstance(config, dict):
        raise FormatError(f"{path}: top level must be a table/object")
    unknown = set(config) - set(CONFIG_SECTIONS)
    if unknown:
        raise InvalidSpecError(
            f"{path}: unknown config sections {sorted(unknown)}; "
            f"expected only {list(CONFIG_SECTIONS)}"
        )
    for key in config:
        if not isinstance(config[key], dict):
            raise FormatError(f"{path}: section {key!r} must be a table/object")
    return config


def _check_keys(section, allowed, where):
    unknown = set(section) - set(allowed)
    if unknown:
        raise InvalidSpecError(
            f"unknown {where} config keys {sorted(unknown)}; allowed: {sorted(allowed)}"
        )


def corpus_spec_from(section, seed_override=None) -> audio.CorpusSpec:
    section = dict(section)
    _check_keys(section, [f.name for f in dataclass_fields(audio.CorpusSpec)], "corpus")
    if "n_classes" not in section:
        raise InvalidSpecError("corpus config must set n_classes")
    if seed_override is not None:
        section["seed"] = seed_override
    return audio.CorpusSpec.from_dict(section)


def network_config_from(section, n_classes_default, sample_rate_default):
    section = dict(section)
    _check_keys(section, [f.name for f in dataclass_fields(nn.NetworkConfig)], "network")
    section.setdefault("n_classes", n_classes_default)
    section.setdefault("sample_rate", sample_rate_default)
    return nn.NetworkConfig.from_dict(section)


def _echo_config(out_dir, payload):
    (Path(out_dir) / CONFIG_ECHO_NAME).write_text(json.dumps(payload, indent=2) + "\n")


@contextmanager
def _locked(out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock} if stale)"
        ) from None
    os.close(fd)
    try:
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    config = load_config(args.config)
    spec = corpus_spec_from(config.get("corpus", {}), seed_override=args.seed)
    with _locked(args.out) as out_dir:
        corpus = audio.synth_class_corpus(spec)
        manifest = audio.save_corpus(corpus, out_dir)
        _echo_config(out_dir, {"command": "gen-corpus", "corpus": spec.to_dict()})
    print(f"wrote {len(corpus.train)} train + {len(corpus.test)} test utterances "
          f"for {spec.n_classes} classes to {manifest}")
    return 0


def _detect_corpus(manifest_path):
    """Training-split class ids and sample rate, from the manifest only."""
    entries = [e for e in audio.load_manifest(manifest_path)
               if e["split"] == audio.TRAIN]
    if not entries:
        raise InvalidSpecError(f"{manifest_path} has no train-split utterances")
    classes = sorted({int(e["class"]) for e in entries})
    first = audio.read_wav(Path(manifest_path).parent / entries[0]["path"])
    return classes, first.fs


def cmd_train(args) -> int:
    config = load_config(args.config) if args.config else {}
    train_section = dict(config.get("train", {}))
    _check_keys(train_section, TRAIN_SECTION_KEYS, "train")
    classes, fs = _detect_corpus(args.manifest)
    net_section = dict(config.get("network", {}))
    if args.frontend is not None:
        net_section["frontend"] = args.frontend
    net_config = network_config_from(net_section, len(classes), fs)

    run_kwargs = {
        "epochs": train_section.get("epochs", 30),
        "eval_every": train_section.get("eval_every", 1),
        "seed": train_section.get("seed"),
        "hop": train_section.get("hop"),
        "no_timing": bool(train_section.get("no_timing", False)),
    }
    if args.epochs is not None:
        run_kwargs["epochs"] = args.epochs
    if args.eval_every is not None:
        run_kwargs["eval_every"] = args.eval_every
    if args.seed is not None:
        run_kwargs["seed"] = args.seed
    if args.hop is not None:
        run_kwargs["hop"] = args.hop
    if args.no_timing:
        run_kwargs["no_timing"] = True

    with _locked(args.out) as out_dir:
        run = training.TrainRun(config=net_config, manifest=Path(args.manifest),
                                out_dir=out_dir, **run_kwargs)
        _echo_config(out_dir, {
            "command": "train",
            "manifest": str(Path(args.manifest).resolve()),
            "network": net_config.to_dict(),
            "train": {**run_kwargs, "seed": run.effective_seed},
        })
        result = training.train(run)
    print(f"frontend={net_config.frontend} "
          f"first_layer_params={net_config.first_layer_param_count} "
          f"epochs={run.epochs} checkpoints={len(result.checkpoints)}")
    if result.records:
        print(f"final heldout FER: {result.records[-1].heldout_fer:.2f}%")
    print(f"final checkpoint: {result.final_checkpoint}")
    return 0


def cmd_inspect_filters(args) -> int:
    network, _, _ = _load_network(args.checkpoint)
    n_points = args.n_points
    front = network.frontend_layer()
    with _locked(args.out) as out_dir:
        if isinstance(front, nn.SincFrontend):
            bank = sinc_layer.materialize(front.layer_params)
            taps, cutoffs = bank.taps, bank.cutoffs
        else:
            taps, cutoffs = front.params()["weight"][:, 0, :], None
        fs = network.config.sample_rate
        filters.export_bank_csv(out_dir / "bank.csv", taps, fs, cutoffs)
        filters.export_bank_json(out_dir / "bank.json", taps, fs, n_points, cutoffs)
        _write_response_csv(out_dir / "response.csv", taps, fs, n_points)
        _echo_config(out_dir, {
            "command": "inspect-filters",
            "checkpoint": str(Path(args.checkpoint).resolve()),
            "n_points": n_points,
            "frontend": network.config.frontend,
        })
    print(f"exported {taps.shape[0]} filters ({network.config.frontend} frontend) "
          f"to {out_dir}")
    return 0


def _write_response_csv(path, taps, fs, n_points):
    """Columns: freq_hz, per-filter magnitudes, cumulative, max-normalized cumulative."""
    freqs = filters.response_frequencies(n_points) * fs
    responses = np.stack([filters.frequency_response(row, n_points) for row in taps])
    cumulative = responses.sum(axis=0)
    peak = cumulative.max()
    norm = cumulative / peak if peak > 0 else cumulative
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["freq_hz"] + [f"resp_{i}" for i in range(taps.shape[0])]
                        + ["cumulative", "cumulative_norm"])
        for j in range(int(n_points)):
            writer.writerow([repr(float(freqs[j]))]
                            + [repr(float(v)) for v in responses[:, j]]
                            + [repr(float(cumulative[j])), repr(float(norm[j]))])


def _load_network(checkpoint_path):
    path = Path(checkpoint_path)
    network, optimizer, meta = nn.load_checkpoint(path)
    return network, optimizer, meta


def _checkpoint_label_map(meta):
    try:
        return {int(k): int(v) for k, v in meta["label_map"].items()}
    except (KeyError, TypeError, ValueError):
        raise InvalidSpecError(
            "checkpoint carries no label map; train through the training loop first"
        ) from None


def cmd_verify(args) -> int:
    network, _, meta = _load_network(args.checkpoint)
    train_classes = set(meta.get("train_classes", []))
    enroll_classes = set(audio.manifest_classes(args.enroll_manifest))
    trial_classes = set(audio.manifest_classes(args.trial_manifest))
    overlap = sorted(train_classes & (enroll_classes | trial_classes))
    if overlap:
        raise InvalidLabelError(
            f"verification speakers {overlap} overlap the training classes; "
            f"use a disjoint pool (e.g. a corpus with class_offset)"
        )
    enroll_waves = audio.load_corpus_waveforms(args.enroll_manifest, split=audio.TRAIN)
    trial_waves = audio.load_corpus_waveforms(args.trial_manifest, split=audio.TEST)
    with _locked(args.out) as out_dir:
        enrolled = training.enroll_speakers(network, enroll_waves)
        items = training.utterance_dvectors(network, trial_waves)
        trials = training.build_verification_trials(
            enrolled, items, n_impostors=args.n_impostors,
            seed=args.seed if args.seed is not None else 0,
        )
        scored = training.score_trials(enrolled, trials)
        training.write_trial_scores(out_dir / "scores.csv", scored)
        eer, threshold = training.equal_error_rate(scored)
        n_genuine = sum(1 for t in scored if t.is_genuine)
        report = {
            "eer_pct": eer,
            "n_genuine": n_genuine,
            "n_impostor": len(scored) - n_genuine,
            "threshold": threshold,
        }
        (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        _echo_config(out_dir, {
            "command": "verify",
            "checkpoint": str(Path(args.checkpoint).resolve()),
            "enroll_manifest": str(Path(args.enroll_manifest).resolve()),
            "trial_manifest": str(Path(args.trial_manifest).resolve()),
            "seed": args.seed if args.seed is not None else 0,
            "n_impostors": args.n_impostors,
        })
    print(f"EER {eer:.2f}% at threshold {threshold:.4f} "
          f"({n_genuine} genuine / {len(scored) - n_genuine} impostor trials)")
    return 0


def cmd_eval(args) -> int:
    network, _, meta = _load_network(args.checkpoint)
    label_map = _checkpoint_label_map(meta)
    waves = audio.load_corpus_waveforms(args.manifest, split=args.split)
    stream = audio.frame_waveforms(
        waves, network.config.chunk_samples,
        args.hop if args.hop is not None else audio.default_hop(waves[0].fs),
    )
    try:
        labels = np.array([label_map[int(l)] for l in stream.labels], dtype=np.int64)
    except KeyError as exc:
        raise InvalidLabelError(
            f"manifest class {exc.args[0]} was not among the training classes"
        ) from None
    with _locked(args.out) as out_dir:
        posteriors = training.predict_posteriors(network, stream.chunks)
        fer = training.frame_error_rate(posteriors, labels)
        cer = training.sentence_error_rate(posteriors, stream.utterance_ids, labels)
        report = {
            "fer_pct": fer,
            "cer_pct": cer,
            "n_chunks": int(stream.n_chunks),
            "n_utterances": len(set(stream.utterance_ids)),
            "split": args.split,
        }
        (out_dir / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
        _echo_config(out_dir, {
            "command": "eval",
            "checkpoint": str(Path(args.checkpoint).resolve()),
            "manifest": str(Path(args.manifest).resolve()),
            "split": args.split,
        })
    print(f"FER {fer:.2f}%  CER {cer:.2f}%  "
          f"({report['n_chunks']} chunks, {report['n_utterances']} utterances)")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sincfront",
        description="Learnable band-pass filterbank front-ends for raw-waveform "
                    "speaker classification: corpus synthesis, training, filter "
                    "inspection, and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="synthesize a labelled corpus to WAV + manifest")
    p.add_argument("--config", required=True, help="TOML/JSON config with a [corpus] section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override corpus seed")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a classifier on a corpus manifest")
    p.add_argument("--config", default=None, help="TOML/JSON config ([network]/[train])")
    p.add_argument("--manifest", required=True, help="corpus manifest.jsonl")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="training seed")
    p.add_argument("--frontend", choices=list(nn.FRONTENDS), default=None,
                   help="front-end layer: cutoff-parametrized (sinc) or free taps (conv)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None,
                   help="checkpoint cadence in epochs")
    p.add_argument("--hop", type=int, default=None, help="chunk hop in samples")
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_s as 0.0 for byte-reproducible logs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("inspect-filters",
                       help="export learned filter cutoffs, taps, and responses")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-points", type=int, default=2048,
                   help="frequency grid resolution")
    p.set_defaults(func=cmd_inspect_filters)

    p = sub.add_parser("verify", help="speaker verification: d-vectors, trials, EER")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--enroll-manifest", required=True,
                   help="manifest whose train split enrolls speakers")
    p.add_argument("--trial-manifest", required=True,
                   help="manifest whose test split provides trial utterances")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="impostor sampling seed")
    p.add_argument("--n-impostors", type=int, default=training.N_IMPOSTORS_PER_GENUINE,
                   help="impostor trials per genuine trial")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="frame/sentence error rates of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=list(audio.SPLITS), default=audio.TEST)
    p.add_argument("--hop", type=int, default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SincFrontError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
