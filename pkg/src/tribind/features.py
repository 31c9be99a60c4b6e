"""Track records to model-ready arrays, with per-track caching.

Training draws one randomly placed audio segment per track per step, the
matching bars of MIDI, and a freshly dropout-composed text. Evaluation uses
sliding segments covering the whole track and the deterministic full text.
Decoded waveforms, parsed MIDI and per-offset mel spectrograms are cached,
so repeated visits to the same track (the common case at desk scale) cost
one decode.
"""

from __future__ import annotations

import numpy as np
import torch

from . import audio, midi
from .corpus import TrackRecord, resolve_uri
from .text import PAD_ID, TextTokenIds, Vocab, compose_eval_text, compose_with_dropout, tokenize_text


class FeaturePipeline:
    def __init__(self, vocab: Vocab, data_root=None, keep_prob: float = 0.5):
        self.vocab = vocab
        self.data_root = data_root
        self.keep_prob = keep_prob
        self._waveforms: dict[str, audio.Waveform] = {}
        self._midis: dict[str, tuple[list[midi.NoteEvent], midi.BarGrid]] = {}
        self._mels: dict[tuple[str, float], np.ndarray] = {}

    def waveform(self, record: TrackRecord) -> audio.Waveform:
        if record.id not in self._waveforms:
            path = resolve_uri(record.audio_uri, self.data_root)
            self._waveforms[record.id] = audio.load_and_resample(path)
        return self._waveforms[record.id]

    def notes_and_grid(self, record: TrackRecord):
        if record.id not in self._midis:
            path = resolve_uri(record.midi_uri, self.data_root)
            self._midis[record.id] = midi.parse_midi(path)
        return self._midis[record.id]

    def _mel_at(self, record: TrackRecord, seg: audio.AudioSegment) -> np.ndarray:
        key = (record.id, seg.start_sec)
        if key not in self._mels:
            self._mels[key] = audio.mel_spectrogram(seg).values
        return self._mels[key]

    def training_example(self, record: TrackRecord, rng: np.random.Generator):
        """One (mel, token field ids, token pad mask, text ids) tuple."""
        wave = self.waveform(record)
        seg = audio.segment(wave, policy=audio.SegmentPolicy.RANDOM, rng=rng)[0]
        mel = self._mel_at(record, seg)
        notes, grid = self.notes_and_grid(record)
        tokens = midi.tokens_for_segment(notes, grid, seg.start_sec)
        text = compose_with_dropout(list(record.texts), rng, self.keep_prob)
        text_ids = tokenize_text(text, self.vocab)
        return mel, tokens.field_ids(), np.asarray(tokens.pad_mask), text_ids

    def eval_segments(self, record: TrackRecord):
        """All SLIDE segments of a track as (mel, field_ids, pad_mask) triples."""
        wave = self.waveform(record)
        notes, grid = self.notes_and_grid(record)
        out = []
        for seg in audio.segment(wave, policy=audio.SegmentPolicy.SLIDE):
            mel = self._mel_at(record, seg)
            tokens = midi.tokens_for_segment(notes, grid, seg.start_sec)
            out.append((mel, tokens.field_ids(), np.asarray(tokens.pad_mask)))
        return out

    def eval_text(self, record: TrackRecord) -> TextTokenIds:
        return tokenize_text(compose_eval_text(list(record.texts)), self.vocab)


def collate_batch(examples, device=None):
    """Stack per-track training examples into model input tensors."""
    mels = torch.from_numpy(np.stack([e[0] for e in examples]))[:, None]
    field_ids = torch.from_numpy(np.stack([e[1] for e in examples]))
    pad_mask = torch.from_numpy(np.stack([e[2] for e in examples]))
    text_ids, text_mask = pad_text_batch([e[3] for e in examples])
    batch = {
        "mel": mels,
        "field_ids": field_ids,
        "token_pad_mask": pad_mask,
        "text_ids": text_ids,
        "text_pad_mask": text_mask,
    }
    if device is not None:
        batch = {k: v.to(device) for k, v in batch.items()}
    return batch


def pad_text_batch(token_ids: list[TextTokenIds]):
    """Right-pad variable-length text ids into one tensor plus pad mask."""
    width = max(t.length for t in token_ids)
    ids = torch.full((len(token_ids), width), PAD_ID, dtype=torch.long)
    for i, t in enumerate(token_ids):
        ids[i, : t.length] = torch.tensor(t.ids)
    return ids, ids == PAD_ID
