"""Training loop, classification metrics, and the speaker-verification
pipeline (d-vectors, trial scoring, equal error rate).

Every run is a pure function of (manifest bytes, config, seed): the held-out
split, the epoch shuffles, and the parameter trajectory are all derived from
numpy SeedSequence streams, so reruns are bit-identical except for wall-time
fields.
"""

import csv
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import audio, nn
from .errors import (
    InvalidInputError,
    InvalidLabelError,
    InvalidSpecError,
    ShapeError,
)

HELDOUT_FRACTION = 0.2
EVAL_BATCH = 256
N_IMPOSTORS_PER_GENUINE = 10

LOG_NAME = "log.csv"
RUN_INFO_NAME = "run_info.json"
LOG_HEADER = ["epoch", "train_loss", "heldout_fer", "wall_s"]

# seed stream tags: 1 = held-out split, 2 = epoch shuffles, 3 = trial sampling
_STREAM_HELDOUT = 1
_STREAM_SHUFFLE = 2
_STREAM_TRIALS = 3


@dataclass
class TrainRun:
    config: nn.NetworkConfig
    manifest: Path
    out_dir: Path
    epochs: int = 30
    eval_every: int = 1
    seed: int | None = None
    hop: int | None = None
    no_timing: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidSpecError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_every < 1:
            raise InvalidSpecError(f"eval cadence must be >= 1, got {self.eval_every}")
        self.manifest = Path(self.manifest)
        self.out_dir = Path(self.out_dir)

    @property
    def effective_seed(self) -> int:
        return self.config.seed if self.seed is None else self.seed


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    heldout_fer: float
    wall_s: float


@dataclass
class TrainResult:
    records: list
    checkpoints: list
    final_checkpoint: Path
    label_map: dict
    out_dir: Path


def _heldout_split(waveforms, seed):
    """Hold out ~20% of training utterances per class, chosen per seed."""
    by_class = {}
    for w in waveforms:
        by_class.setdefault(w.label, []).append(w)
    train, heldout = [], []
    for class_id in sorted(by_class):
        utts = sorted(by_class[class_id], key=lambda w: w.utterance_id)
        n = len(utts)
        k = min(n - 1, max(1, round(HELDOUT_FRACTION * n))) if n > 1 else 0
        order = np.random.default_rng(
            np.random.SeedSequence([seed, _STREAM_HELDOUT, class_id])
        ).permutation(n)
        held_idx = set(order[:k].tolist())
        for i, w in enumerate(utts):
            (heldout if i in held_idx else train).append(w)
    return train, heldout


def _label_mapping(class_ids, n_classes):
    classes = sorted(class_ids)
    if len(classes) != n_classes:
        raise InvalidSpecError(
            f"manifest has {len(classes)} training classes but the network "
            f"output layer has {n_classes}"
        )
    return {c: i for i, c in enumerate(classes)}


def _map_labels(labels, label_map):
    try:
        return np.array([label_map[int(l)] for l in labels], dtype=np.int64)
    except KeyError as exc:
        raise InvalidLabelError(f"label {exc.args[0]} not among training classes") from exc


def predict_posteriors(network, chunks, batch=EVAL_BATCH):
    """Inference-mode class posteriors for a stack of chunks, batched."""
    chunks = np.asarray(chunks, dtype=np.float64)
    if chunks.ndim == 2:
        chunks = chunks[:, None, :]
    outs = []
    for start in range(0, chunks.shape[0], batch):
        logits, _ = network.forward(chunks[start:start + batch], training=False)
        outs.append(nn.softmax(logits))
    return np.concatenate(outs, axis=0)


def train(run: TrainRun) -> TrainResult:
    """Run the training loop and write checkpoints, log.csv, and run_info.json."""
    seed = run.effective_seed
    config = replace(run.config, seed=seed)
    waveforms = audio.load_corpus_waveforms(run.manifest, split=audio.TRAIN)
    fs = waveforms[0].fs
    for w in waveforms:
        if w.fs != fs:
            raise InvalidSpecError("manifest mixes sample rates")
    if fs != config.sample_rate:
        raise InvalidSpecError(
            f"corpus sample rate {fs} does not match network config {config.sample_rate}"
        )
    label_map = _label_mapping({w.label for w in waveforms}, config.n_classes)

    train_utts, heldout_utts = _heldout_split(waveforms, seed)
    chunk_len = config.chunk_samples
    hop = run.hop if run.hop is not None else audio.default_hop(fs)
    train_stream = audio.frame_waveforms(train_utts, chunk_len, hop)
    train_chunks = train_stream.chunks[:, None, :]
    train_labels = _map_labels(train_stream.labels, label_map)
    if heldout_utts:
        held_stream = audio.frame_waveforms(heldout_utts, chunk_len, hop)
        held_chunks = held_stream.chunks[:, None, :]
        held_labels = _map_labels(held_stream.labels, label_map)
    else:
        if run.epochs > 0:
            raise InvalidInputError(
                "held-out split is empty (every class needs >= 2 training "
                "utterances to train with evaluation)"
            )
        held_chunks = held_labels = None

    network = nn.Network(config)
    optimizer = nn.RMSProp(config.learning_rate, config.rms_alpha, config.rms_eps)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "train_classes": sorted(label_map),
        "label_map": {str(k): v for k, v in label_map.items()},
    }

    checkpoints = []

    def save(epoch):
        path = run.out_dir / f"ckpt_epoch{epoch:04d}.npz"
        nn.save_checkpoint(path, network, optimizer, epoch, extra_meta=meta)
        checkpoints.append(path)
        return path

    final = save(0)
    records = []
    n = train_chunks.shape[0]
    batch_size = config.batch_size
    for epoch in range(1, run.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng(
            np.random.SeedSequence([seed, _STREAM_SHUFFLE, epoch])
        ).permutation(n)
        loss_sum = 0.0
        seen = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if idx.size < 2:
                # a lone trailing chunk cannot feed batch statistics
                continue
            logits, _ = network.forward(train_chunks[idx], training=True)
            loss, grad = nn.softmax_cross_entropy(logits, train_labels[idx])
            network.backward(grad)
            optimizer.step(network.parameters(), network.gradients())
            loss_sum += loss * idx.size
            seen += idx.size
        if seen == 0:
            raise InvalidInputError("corpus yields no trainable minibatch (need >= 2 chunks)")
        posteriors = predict_posteriors(network, held_chunks)
        fer = frame_error_rate(posteriors, held_labels)
        wall = 0.0 if run.no_timing else time.perf_counter() - t0
        records.append(EpochRecord(epoch, loss_sum / seen, fer, wall))
        if epoch % run.eval_every == 0 or epoch == run.epochs:
            final = save(epoch)

    _write_log(run.out_dir / LOG_NAME, records)
    info = {
        "seed": seed,
        "frontend": config.frontend,
        "first_layer_params": config.first_layer_param_count,
        "n_classes": config.n_classes,
        "train_classes": meta["train_classes"],
        "epochs": run.epochs,
        "steps_per_epoch": int(np.ceil(n / batch_size)),
        "n_train_chunks": int(n),
        "n_heldout_chunks": int(held_chunks.shape[0]) if held_chunks is not None else 0,
        "checkpoints": [p.name for p in checkpoints],
        "final_checkpoint": final.name,
    }
    (run.out_dir / RUN_INFO_NAME).write_text(json.dumps(info, indent=2) + "\n")
    return TrainResult(records, checkpoints, final, label_map, run.out_dir)


def _write_log(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for r in records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.heldout_fer),
                             repr(r.wall_s)])


def read_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != LOG_HEADER:
        raise InvalidInputError(f"{path} is not a training log (header {rows[:1]})")
    return [EpochRecord(int(e), float(l), float(f), float(ws))
            for e, l, f, ws in rows[1:]]


# ---------------------------------------------------------------------------
# classification metrics
# ---------------------------------------------------------------------------

def frame_error_rate(posteriors, labels) -> float:
    """100 * fraction of frames whose argmax class differs from the label."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if posteriors.ndim != 2 or labels.shape != (posteriors.shape[0],):
        raise ShapeError(
            f"got posteriors {posteriors.shape} and labels {labels.shape}"
        )
    if posteriors.shape[0] == 0:
        raise InvalidInputError("no frames to score")
    # np.argmax resolves ties toward the lowest class index
    predictions = np.argmax(posteriors, axis=1)
    return 100.0 * float(np.mean(predictions != labels))


def sentence_error_rate(posteriors, utterance_ids, labels) -> float:
    """Average chunk posteriors per utterance, argmax, compare to the label."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = posteriors.shape[0]
    if posteriors.ndim != 2 or labels.shape != (n,) or len(utterance_ids) != n:
        raise ShapeError("posteriors, utterance ids, and labels must align")
    if n == 0:
        raise InvalidInputError("no chunks to score")
    groups = {}
    for i, utt in enumerate(utterance_ids):
        groups.setdefault(utt, []).append(i)
    errors = 0
    for utt, idx in groups.items():
        utt_labels = set(labels[idx].tolist())
        if len(utt_labels) != 1:
            raise InvalidLabelError(f"utterance {utt} carries multiple labels {sorted(utt_labels)}")
        mean_post = posteriors[idx].mean(axis=0)
        if int(np.argmax(mean_post)) != labels[idx[0]]:
            errors += 1
    return 100.0 * errors / len(groups)


# ---------------------------------------------------------------------------
# speaker verification
# ---------------------------------------------------------------------------

@dataclass
class Trial:
    dvector: np.ndarray
    claimed: int
    is_genuine: bool


@dataclass
class ScoredTrial:
    score: float
    is_genuine: bool


def extract_dvector(network, chunks) -> np.ndarray:
    """L2-normalize each chunk's last-hidden activation, average, normalize."""
    chunks = np.asarray(chunks, dtype=np.float64)
    if chunks.ndim == 2:
        chunks = chunks[:, None, :]
    if chunks.shape[0] == 0:
        raise InvalidInputError("utterance has no chunks")
    vecs = []
    for start in range(0, chunks.shape[0], EVAL_BATCH):
        vecs.append(network.embed(chunks[start:start + EVAL_BATCH]))
    hidden = np.concatenate(vecs, axis=0)
    norms = np.linalg.norm(hidden, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InvalidInputError("a chunk produced an all-zero hidden activation")
    mean = (hidden / norms).mean(axis=0)
    total = np.linalg.norm(mean)
    if total == 0.0:
        raise InvalidInputError("chunk d-vectors cancelled to the zero vector")
    return mean / total


def utterance_dvectors(network, waveforms, hop=None):
    """One d-vector per utterance, framed like training by default."""
    out = []
    for w in waveforms:
        stream = audio.frame_signal(w, network.config.chunk_samples,
                                    hop if hop is not None else audio.default_hop(w.fs))
        if stream.n_chunks == 0:
            raise InvalidInputError(
                f"utterance {w.utterance_id} too short for one chunk"
            )
        out.append((w.utterance_id, int(w.label), extract_dvector(network, stream.chunks)))
    return out


def enroll_speakers(network, waveforms, hop=None):
    """Speaker -> unit enrolment vector (mean of its utterance d-vectors)."""
    per_speaker = {}
    for _, speaker, vec in utterance_dvectors(network, waveforms, hop):
        per_speaker.setdefault(speaker, []).append(vec)
    enrolled = {}
    for speaker, vecs in sorted(per_speaker.items()):
        mean = np.mean(vecs, axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            raise InvalidInputError(f"speaker {speaker} enrolment cancelled to zero")
        enrolled[speaker] = mean / norm
    return enrolled


def build_verification_trials(enrolled_speakers, test_items,
                              n_impostors=N_IMPOSTORS_PER_GENUINE, seed=0):
    """One genuine trial per test utterance plus n_impostors claimed-id trials."""
    speakers = sorted(enrolled_speakers)
    if len(speakers) < 2:
        raise InvalidInputError("verification needs at least 2 enrolled speakers")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_TRIALS]))
    trials = []
    for _, speaker, vec in test_items:
        if speaker not in enrolled_speakers:
            raise InvalidLabelError(f"test speaker {speaker} is not enrolled")
        trials.append(Trial(vec, speaker, True))
        others = [s for s in speakers if s != speaker]
        claims = rng.choice(len(others), size=n_impostors,
                            replace=len(others) < n_impostors)
        for c in claims:
            trials.append(Trial(vec, others[int(c)], False))
    return trials


def score_trials(enrolled, trials):
    """Cosine similarity of each trial's d-vector against the claimed speaker."""
    scored = []
    for t in trials:
        if t.claimed not in enrolled:
            raise InvalidLabelError(f"claimed speaker {t.claimed} is not enrolled")
        score = float(np.dot(enrolled[t.claimed], t.dvector))
        if not np.isfinite(score):
            raise InvalidInputError(f"non-finite trial score for speaker {t.claimed}")
        scored.append(ScoredTrial(score, t.is_genuine))
    return scored


def equal_error_rate(scored_trials):
    """Sweep unique score thresholds; return (EER percent, threshold).

    FAR(t) = fraction of impostor scores >= t, FRR(t) = fraction of genuine
    scores < t. The reported operating point minimizes |FAR - FRR|, with
    ties resolved toward the lowest threshold, and EER is the midpoint
    (FAR + FRR) / 2 there.
    """
    scores = np.array([t.score for t in scored_trials], dtype=np.float64)
    genuine = np.array([bool(t.is_genuine) for t in scored_trials])
    if scores.size == 0 or genuine.all() or not genuine.any():
        raise InvalidInputError("need at least one genuine and one impostor trial")
    gen_sorted = np.sort(scores[genuine])
    imp_sorted = np.sort(scores[~genuine])
    thresholds = np.unique(scores)
    far = (imp_sorted.size - np.searchsorted(imp_sorted, thresholds, side="left")) \
        / imp_sorted.size
    frr = np.searchsorted(gen_sorted, thresholds, side="left") / gen_sorted.size
    i = int(np.argmin(np.abs(far - frr)))
    return 100.0 * (far[i] + frr[i]) / 2.0, float(thresholds[i])


def write_trial_scores(path, scored_trials):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["score", "is_genuine"])
        for t in scored_trials:
            writer.writerow([repr(t.score), int(t.is_genuine)])


def read_trial_scores(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["score", "is_genuine"]:
        raise InvalidInputError(f"{path} is not a trial score file")
    return [ScoredTrial(float(s), bool(int(g))) for s, g in rows[1:]]
