"""Procedural miniature corpora.

Two synthetic sets reproduce the distribution-mismatch premise at desk scale:
a speech-to-motion set (beat-driven upper-body gestures over a near-still
lower body, with an audio track) and a text-to-motion set (labeled full-body
templates with token prompts). Templates are analytic closed forms so every
downstream test has an exact oracle.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .seeding import substream

FPS = 30
N_FRAMES = 128
N_CHANNELS = 24
PART_RANGES = {"upper": (0, 12), "hands": (12, 18), "lower": (18, 24)}
PARTS = ("upper", "hands", "lower")
VALUE_BOUND = math.pi + 1.0

TEMPLATES = ("walk", "sit", "wave", "kneel", "stretch", "stand_still", "circle")
CONNECTIVES = ("while", "and")
VOCAB = {w: i for i, w in enumerate(TEMPLATES + CONNECTIVES)}
ID2WORD = {i: w for w, i in VOCAB.items()}
VOCAB_SIZE = len(VOCAB)

# templates an upper-only template may be paired with (and vice versa)
UPPER_TEMPLATES = ("wave", "stretch")
LOWER_TEMPLATES = ("walk", "circle", "kneel", "stand_still")


class ConfigError(ValueError):
    pass


class TemplateError(ValueError):
    pass


@dataclass
class MotionClip:
    fps: int
    frames: np.ndarray  # (N, D)
    layout: dict = field(default_factory=lambda: dict(PART_RANGES))

    def validate(self):
        n, d = self.frames.shape
        if d != N_CHANNELS:
            raise ValueError(f"expected {N_CHANNELS} channels, got {d}")
        covered = sorted((lo, hi) for lo, hi in self.layout.values())
        edges = [0]
        for lo, hi in covered:
            if lo != edges[-1]:
                raise ValueError("part ranges must partition the channels")
            edges.append(hi)
        if edges[-1] != d:
            raise ValueError("part ranges must cover all channels")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("non-finite frames")
        if np.abs(self.frames).max() > VALUE_BOUND:
            raise ValueError("frame values exceed bound")
        return self

    def part(self, name):
        lo, hi = self.layout[name]
        return self.frames[:, lo:hi]


@dataclass
class AudioTrack:
    beat_times: list  # ascending frame indices
    energy: np.ndarray  # (N,) in [0, 1]
    tokens: list  # (token_id, start_frame, end_frame)


@dataclass
class ClipRecord:
    clip_id: str
    motion: MotionClip
    audio: AudioTrack | None
    prompt: list | None  # token ids
    labels: dict  # part -> template name


@dataclass
class Corpus:
    clips: list
    train_ids: list
    test_ids: list
    seed: int
    cfg: dict

    def by_id(self, clip_id):
        return self._index[clip_id]

    def __post_init__(self):
        self._index = {c.clip_id: c for c in self.clips}

    def train_clips(self):
        return [self._index[i] for i in self.train_ids]

    def test_clips(self):
        return [self._index[i] for i in self.test_ids]


@dataclass
class DataGenConfig:
    tempo_lo: float = 90.0
    tempo_hi: float = 150.0
    stroke_amp: float = 0.6
    noise: float = 0.01
    jitter: float = 0.01
    step_freq: float = 1.875  # Hz; bin 8 of a 128-frame FFT at 30 fps
    freq_jitter: float = 0.2  # Hz, stays within +-1 FFT bin
    pair_fraction: float = 0.3
    snap_beats: bool = True  # snap beat periods to the x4 latent grid

    def validate(self):
        if not (90.0 <= self.tempo_lo <= self.tempo_hi <= 150.0):
            raise ConfigError(
                f"tempo range [{self.tempo_lo}, {self.tempo_hi}] outside 90-150 BPM")
        if self.jitter < 0 or self.noise < 0:
            raise ConfigError("noise levels must be non-negative")
        return self


def _smooth_noise(rng, n, level, win=9):
    """Box-smoothed white noise; keeps clips wiggly but bounded."""
    if level == 0:
        return np.zeros(n)
    w = rng.normal(0.0, level, size=n + win - 1)
    kern = np.ones(win) / win
    return np.convolve(w, kern, mode="valid") * math.sqrt(win)


def _tspan(n):
    return np.arange(n) / FPS


def gen_speech_clip(cfg, rng, energy=None):
    """Beat-driven gesture clip plus its audio track.

    Upper channels carry Gaussian stroke bumps centered on beats (amplitude
    follows the energy envelope), hands a faster oscillation, the lower body a
    standing pose with a small sway.
    """
    cfg.validate()
    n = N_FRAMES
    t = _tspan(n)
    tempo = rng.uniform(cfg.tempo_lo, cfg.tempo_hi)
    period = int(round(FPS * 60.0 / tempo))
    if cfg.snap_beats:
        period = max(4 * round(period / 4), 4)
    beats = list(range(0, n, period))

    if energy is None:
        raw = _smooth_noise(rng, n, 1.0, win=15)
        lo, hi = raw.min(), raw.max()
        energy = (raw - lo) / (hi - lo) if hi > lo else np.full(n, 0.5)
        energy = 0.15 + 0.85 * energy
    energy = np.asarray(energy, dtype=np.float64)

    frames = np.zeros((n, N_CHANNELS))
    # upper: one stroke per beat, amplitude ~ energy; each speaker reuses a
    # signature per-clip stroke pattern
    idx = np.arange(n)
    pattern = rng.normal(0.0, 1.0, size=12)
    pattern /= np.abs(pattern).max()
    for b in beats:
        bump = np.exp(-0.5 * ((idx - b) / 2.2) ** 2)
        frames[:, 0:12] += bump[:, None] * (cfg.stroke_amp * energy[b] * pattern)[None, :]
    # hands: higher-frequency oscillation gated by energy (stays below the
    # latent Nyquist rate of the x4-downsampled codec)
    fh = rng.uniform(2.5, 3.5)
    for c in range(12, 18):
        phase = rng.uniform(0.0, 2.0 * math.pi)
        frames[:, c] += 0.35 * (0.3 + 0.7 * energy) * np.sin(2 * math.pi * fh * t + phase)
    # lower: standing pose plus small sway
    for c in range(18, 24):
        phase = rng.uniform(0.0, 2.0 * math.pi)
        frames[:, c] += 0.03 * np.sin(2 * math.pi * 0.3 * t + phase)
    for c in range(N_CHANNELS):
        frames[:, c] += _smooth_noise(rng, n, cfg.noise)
    np.clip(frames, -VALUE_BOUND, VALUE_BOUND, out=frames)

    tokens = []
    pos = 0
    while pos < n:
        span = int(rng.integers(8, 20))
        tokens.append((int(rng.integers(0, VOCAB_SIZE)), pos, min(pos + span, n)))
        pos += span
    audio = AudioTrack(beat_times=beats, energy=energy, tokens=tokens)
    clip = MotionClip(fps=FPS, frames=frames).validate()
    return clip, audio


def _smoothstep(n, start, stop):
    """0 -> 1 ramp over [start, stop], held outside."""
    x = np.clip((np.arange(n) - start) / max(stop - start, 1), 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def walk_reference(n, freq, phase=0.0):
    """Canonical walk leg signals (4 channels) at the given step frequency."""
    t = _tspan(n)
    offs = [0.0, math.pi, math.pi, 0.0]
    return np.stack([np.sin(2 * math.pi * freq * t + phase + o) for o in offs], axis=1)


def _apply_template(frames, name, rng, cfg):
    n = frames.shape[0]
    t = _tspan(n)
    if name == "walk":
        freq = cfg.step_freq + rng.uniform(-cfg.freq_jitter, cfg.freq_jitter)
        amp = 0.6 * rng.uniform(0.7, 1.3)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        frames[:, 18:22] += amp * walk_reference(n, freq, phase)
        frames[:, 22] += 0.3 * amp * np.sin(2 * math.pi * freq * t + phase)
        frames[:, 23] += 0.02 * rng.uniform(0.7, 1.3) * np.arange(n) / 4.0
    elif name == "circle":
        freq = cfg.step_freq + rng.uniform(-cfg.freq_jitter, cfg.freq_jitter)
        amp = 0.5 * rng.uniform(0.7, 1.3)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        frames[:, 18:22] += amp * walk_reference(n, freq, phase)
        frames[:, 22] += 1.0 * rng.uniform(0.8, 1.2) * np.sin(2 * math.pi * 0.15 * t)
        frames[:, 23] += 1.2 * _smoothstep(n, 0, n - 1) * rng.uniform(0.8, 1.2)
    elif name == "sit":
        ramp = _smoothstep(n, 20, 50)
        target = np.array([-1.1, -1.1, 0.9, 0.9, 0.3, 0.0]) * rng.uniform(0.85, 1.15)
        frames[:, 18:24] += ramp[:, None] * target[None, :]
        frames[:, 0:4] += 0.25 * rng.uniform(0.8, 1.2) * ramp[:, None]
    elif name == "kneel":
        ramp = _smoothstep(n, 20, 55)
        target = np.array([-0.5, -1.3, -1.3, 0.4, 0.0, 0.1]) * rng.uniform(0.85, 1.15)
        frames[:, 18:24] += ramp[:, None] * target[None, :]
    elif name == "wave":
        freq = rng.uniform(1.7, 2.3)
        amp = 0.7 * rng.uniform(0.7, 1.3)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        frames[:, 0] += amp * np.sin(2 * math.pi * freq * t + phase)
        frames[:, 1] += 0.4 * amp * np.sin(2 * math.pi * freq * t + phase + 0.5)
        frames[:, 2] += 0.3 * amp
    elif name == "stretch":
        ramp = _smoothstep(n, 10, 90)
        target = np.array([0.9, 0.9, 0.6, 0.6, 0.4, 0.4]) * rng.uniform(0.8, 1.2)
        frames[:, 0:6] += ramp[:, None] * target[None, :]
    elif name == "stand_still":
        pass
    else:
        raise TemplateError(f"unknown template {name!r}")


def _template_parts(name):
    if name in UPPER_TEMPLATES:
        return ("upper",)
    if name == "sit":
        return ("lower", "upper")
    return ("lower",)


def gen_text_clip(cfg, rng, templates=None):
    """Labeled full-body template clip plus its prompt tokens.

    templates: explicit 1-2 template names; drawn from cfg defaults when None.
    """
    cfg.validate()
    if templates is None:
        if rng.uniform() < cfg.pair_fraction:
            templates = [str(rng.choice(UPPER_TEMPLATES)), str(rng.choice(LOWER_TEMPLATES))]
        else:
            templates = [str(rng.choice(TEMPLATES))]
    if not 1 <= len(templates) <= 2:
        raise TemplateError("a clip uses 1-2 templates")
    for name in templates:
        if name not in TEMPLATES:
            raise TemplateError(f"unknown template {name!r}")

    frames = np.zeros((N_FRAMES, N_CHANNELS))
    labels = {p: "base" for p in PARTS}
    for name in templates:
        _apply_template(frames, name, rng, cfg)
        for p in _template_parts(name):
            labels[p] = name
    for c in range(N_CHANNELS):
        frames[:, c] += _smooth_noise(rng, N_FRAMES, cfg.jitter)
    np.clip(frames, -VALUE_BOUND, VALUE_BOUND, out=frames)

    prompt = [VOCAB[templates[0]]]
    for name in templates[1:]:
        prompt += [VOCAB["while"], VOCAB[name]]
    clip = MotionClip(fps=FPS, frames=frames).validate()
    return clip, prompt


def _balanced_templates(count, pair_fraction, rng):
    """Template sets with near-uniform per-template occurrence counts."""
    counts = {name: 0 for name in TEMPLATES}

    def least(pool):
        lo = min(counts[p] for p in pool)
        cands = [p for p in pool if counts[p] == lo]
        return str(rng.choice(cands))

    sets = []
    for _ in range(count):
        first = least(TEMPLATES)
        chosen = [first]
        if rng.uniform() < pair_fraction:
            if first in UPPER_TEMPLATES:
                chosen.append(least(LOWER_TEMPLATES))
            elif first in LOWER_TEMPLATES:
                chosen.append(least(UPPER_TEMPLATES))
        for name in chosen:
            counts[name] += 1
        if chosen[0] in LOWER_TEMPLATES and len(chosen) == 2:
            chosen = chosen[::-1]  # prompt reads upper-first
        sets.append(chosen)
    return sets


def build_corpus(cfg, seed, n_s2m, n_t2m):
    """Deterministic corpus with a 90/10 train/test split."""
    cfg.validate()
    if n_s2m <= 0 or n_t2m <= 0:
        raise ConfigError("clip counts must be positive")
    clips = []
    for i in range(n_s2m):
        rng = substream(seed, f"clip/s2m/{i}")
        motion, audio = gen_speech_clip(cfg, rng)
        labels = {"upper": "beat_gesture", "hands": "beat_gesture", "lower": "still"}
        clips.append(ClipRecord(f"s2m_{i:04d}", motion, audio, None, labels))
    tpl_sets = _balanced_templates(n_t2m, cfg.pair_fraction, substream(seed, "templates"))
    for i in range(n_t2m):
        rng = substream(seed, f"clip/t2m/{i}")
        motion, prompt = gen_text_clip(cfg, rng, templates=tpl_sets[i])
        labels = {p: "base" for p in PARTS}
        for name in tpl_sets[i]:
            for p in _template_parts(name):
                labels[p] = name
        clips.append(ClipRecord(f"t2m_{i:04d}", motion, None, prompt, labels))

    train_ids, test_ids = [], []
    for kind, count in (("s2m", n_s2m), ("t2m", n_t2m)):
        ids = [f"{kind}_{i:04d}" for i in range(count)]
        order = substream(seed, f"split/{kind}").permutation(count)
        n_test = max(1, count // 10)
        test_ids += [ids[j] for j in sorted(order[:n_test])]
        train_ids += [ids[j] for j in sorted(order[n_test:])]

    cfg_dict = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    cfg_dict.update({"n_s2m": n_s2m, "n_t2m": n_t2m})
    return Corpus(clips=clips, train_ids=train_ids, test_ids=test_ids,
                  seed=seed, cfg=cfg_dict)


# ---------------------------------------------------------------------------
# on-disk format: manifest.json + clip_<id>.json

def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def clip_to_dict(rec):
    d = {
        "fps": rec.motion.fps,
        "layout": {k: list(v) for k, v in rec.motion.layout.items()},
        "frames": [[float(v) for v in row] for row in rec.motion.frames],
        "audio": None,
        "prompt": list(rec.prompt) if rec.prompt is not None else None,
        "labels": dict(rec.labels),
    }
    if rec.audio is not None:
        d["audio"] = {
            "beats": [int(b) for b in rec.audio.beat_times],
            "energy": [float(e) for e in rec.audio.energy],
            "tokens": [[int(t), int(a), int(b)] for t, a, b in rec.audio.tokens],
        }
    return d


def clip_from_dict(clip_id, d):
    motion = MotionClip(fps=d["fps"], frames=np.array(d["frames"], dtype=np.float64),
                        layout={k: tuple(v) for k, v in d["layout"].items()})
    audio = None
    if d["audio"] is not None:
        audio = AudioTrack(
            beat_times=[int(b) for b in d["audio"]["beats"]],
            energy=np.array(d["audio"]["energy"], dtype=np.float64),
            tokens=[tuple(t) for t in d["audio"]["tokens"]],
        )
    prompt = d["prompt"]
    return ClipRecord(clip_id, motion, audio, prompt, dict(d["labels"]))


def save_corpus(corpus, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "seed": corpus.seed,
        "cfg": corpus.cfg,
        "splits": {"train": corpus.train_ids, "test": corpus.test_ids},
    }
    _atomic_write(os.path.join(out_dir, "manifest.json"),
                  json.dumps(manifest, indent=1, sort_keys=True))
    for rec in corpus.clips:
        _atomic_write(os.path.join(out_dir, f"clip_{rec.clip_id}.json"),
                      json.dumps(clip_to_dict(rec)))


def load_corpus(data_dir):
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    ids = manifest["splits"]["train"] + manifest["splits"]["test"]
    clips = []
    for clip_id in sorted(ids):
        with open(os.path.join(data_dir, f"clip_{clip_id}.json")) as f:
            clips.append(clip_from_dict(clip_id, json.load(f)))
    return Corpus(clips=clips, train_ids=manifest["splits"]["train"],
                  test_ids=manifest["splits"]["test"], seed=manifest["seed"],
                  cfg=manifest["cfg"])


def load_clip(path):
    clip_id = os.path.basename(path).removeprefix("clip_").removesuffix(".json")
    with open(path) as f:
        return clip_from_dict(clip_id, json.load(f))
