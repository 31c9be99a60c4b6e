"""Synthetic trimodal corpora for development, testing and demos.

Each generated track is a 20-second tone pattern (sines derived from MIDI
pitches), a matching MIDI file at 120 BPM in 4/4, and one or more tag
texts. Three corpus layouts:

- overfit: n fully distinct triples for end-to-end memorization checks.
- complementary: class identity split across modalities; the audio carries
  one half of the label, the MIDI the other, and only their fusion pins
  down the item.
- multisource: a larger weak pool with noisy multi-tag texts plus a small
  strong pool with clean unique texts.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, write_wav
from .corpus import DatasetManifest, Source, Split, TrackRecord, save_manifest
from .midi import write_midi
from .text import TextElement, TextKind

_WORDS = [
    "amber", "breeze", "cobalt", "drift", "ember", "frost", "glade", "harbor",
    "indigo", "jade", "kestrel", "lumen", "meadow", "nectar", "onyx", "prism",
    "quartz", "russet", "sable", "tundra", "umber", "velvet", "willow", "xenon",
    "yarrow", "zephyr", "aurora", "basalt", "cinder", "dune", "echo", "fjord",
]
_STYLE_WORDS = [
    "waltz", "nocturne", "prelude", "etude", "ballade", "rondo", "sonata",
    "mazurka", "fantasy", "bagatelle", "impromptu", "caprice", "serenade",
    "toccata", "berceuse", "arabesque",
]


def pitch_to_hz(pitch: int) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


def tone_pattern(
    pitches: list[int],
    duration_sec: float = 20.0,
    rate: int = SAMPLE_RATE,
    note_sec: float = 0.5,
) -> np.ndarray:
    """Cycle through the pitches as enveloped sine notes."""
    n = int(duration_sec * rate)
    samples = np.zeros(n, dtype=np.float64)
    note_len = int(note_sec * rate)
    t = np.arange(note_len) / rate
    envelope = np.minimum(1.0, 10.0 * t) * np.exp(-2.0 * t)
    for i in range(n // note_len):
        pitch = pitches[i % len(pitches)]
        tone = np.sin(2 * np.pi * pitch_to_hz(pitch) * t)
        tone += 0.5 * np.sin(2 * np.pi * 2 * pitch_to_hz(pitch) * t)
        samples[i * note_len : (i + 1) * note_len] = 0.4 * envelope * tone
    return samples


def _midi_notes(pitches: list[int], duration_sec: float, note_sec: float = 0.5):
    """Matching MIDI at 120 BPM: one note per pattern slot (0.5 s = 1 beat)."""
    beats = int(duration_sec / note_sec)
    return [(float(b), pitches[b % len(pitches)], 0.9, 80) for b in range(beats)]


def _write_track(
    out_dir: Path,
    track_id: str,
    pitches_audio: list[int],
    pitches_midi: list[int],
    texts: list[TextElement],
    source: Source,
    split: Split,
    duration_sec: float = 20.0,
) -> TrackRecord:
    wav_path = out_dir / f"{track_id}.wav"
    mid_path = out_dir / f"{track_id}.mid"
    write_wav(wav_path, tone_pattern(pitches_audio, duration_sec))
    write_midi(mid_path, _midi_notes(pitches_midi, duration_sec))
    return TrackRecord(
        id=track_id,
        audio_uri=str(wav_path),
        midi_uri=str(mid_path),
        texts=tuple(texts),
        source=source,
        duration_sec=duration_sec,
        split=split,
    )


def make_overfit_corpus(out_dir: str | Path, n: int = 16, seed: int = 0) -> Path:
    """n distinct (audio, MIDI, unique tag) triples; everything in TRAIN."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        base = 36 + int(rng.integers(0, 3)) + (i * 48) // n
        pitches = [base, base + 4, base + 7, base + 12]
        tag = f"{_WORDS[i % len(_WORDS)]} {_STYLE_WORDS[i % len(_STYLE_WORDS)]}"
        records.append(
            _write_track(
                out_dir, f"overfit_{i:02d}", pitches, pitches,
                [TextElement(TextKind.TAG, tag)], Source.STRONG, Split.TRAIN,
            )
        )
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(DatasetManifest(records=records), manifest_path)
    return manifest_path


def make_complementary_corpus(
    out_dir: str | Path, n_audio_classes: int = 8, n_midi_classes: int = 8
) -> Path:
    """Grid of (audio class, midi class) items: audio encodes only the first
    half of the label, MIDI only the second, texts name both halves."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for a in range(n_audio_classes):
        audio_base = 36 + 6 * a
        audio_pitches = [audio_base, audio_base + 3]
        for m in range(n_midi_classes):
            midi_base = 40 + 5 * m
            midi_pitches = [midi_base, midi_base + 7, midi_base + 12]
            tag = f"{_WORDS[a]} {_STYLE_WORDS[m]}"
            records.append(
                _write_track(
                    out_dir, f"grid_{a}{m}", audio_pitches, midi_pitches,
                    [TextElement(TextKind.TAG, tag)], Source.STRONG, Split.TRAIN,
                )
            )
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(DatasetManifest(records=records), manifest_path)
    return manifest_path


def make_multisource_corpus(
    out_dir: str | Path, n_weak: int = 64, n_strong: int = 16, seed: int = 0
) -> Path:
    """Weak pool with noisy multi-tag texts plus a clean strong pool."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_weak):
        base = 30 + int(rng.integers(0, 48))
        pitches = [base, base + int(rng.integers(3, 8)), base + 12]
        texts = [
            TextElement(TextKind.TAG, _WORDS[int(rng.integers(len(_WORDS)))]),
            TextElement(TextKind.TAG, _STYLE_WORDS[int(rng.integers(len(_STYLE_WORDS)))]),
            TextElement(
                TextKind.CAPTION,
                f"{_WORDS[int(rng.integers(len(_WORDS)))]} piano "
                f"{_STYLE_WORDS[int(rng.integers(len(_STYLE_WORDS)))]}",
            ),
        ]
        records.append(
            _write_track(out_dir, f"weak_{i:03d}", pitches, pitches, texts,
                         Source.WEAK, Split.TRAIN)
        )
    for i in range(n_strong):
        base = 36 + 3 * i
        pitches = [base, base + 5, base + 9]
        split = Split.TRAIN if i < n_strong - 4 else Split.VAL
        tag = f"{_WORDS[(7 * i + 3) % len(_WORDS)]} {_STYLE_WORDS[(5 * i + 1) % len(_STYLE_WORDS)]}"
        records.append(
            _write_track(out_dir, f"strong_{i:03d}", pitches, pitches,
                         [TextElement(TextKind.TAG, tag)], Source.STRONG, split)
        )
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(DatasetManifest(records=records), manifest_path)
    return manifest_path


CORPUS_KINDS = {
    "overfit": make_overfit_corpus,
    "complementary": make_complementary_corpus,
    "multisource": make_multisource_corpus,
}
