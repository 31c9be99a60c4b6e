"""Standard MIDI File parsing and compound-word note tokenization.

MIDI is decoded natively (format 0/1, running status, tempo and time
signature meta events) into note events carrying both beat and wall-clock
onsets, plus a bar grid in seconds. Audio segments are aligned to the
nearest bar onset, and the notes of the covered bars become fixed-length
sequences of (bar-flag, position, pitch, duration) tokens: 16 positions per
bar, durations in thirty-second-note units clipped to [1, 64], exactly 512
tokens per sequence with PAD forming a suffix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

SEQ_LEN = 512
POSITIONS_PER_BAR = 16
DURATION_UNITS_PER_BEAT = 8  # thirty-second notes per quarter
MAX_DURATION = 64
DEFAULT_TEMPO_US = 500000  # 120 BPM
DEFAULT_BEATS_PER_BAR = 4


class MidiDecodeError(Exception):
    pass


class UnmatchedNoteOff(Warning):
    pass


@dataclass(frozen=True)
class NoteEvent:
    onset_sec: float
    onset_beats: float
    pitch: int
    duration_beats: float
    velocity: int

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside MIDI range")
        if self.duration_beats <= 0:
            raise ValueError("note duration must be positive")


@dataclass
class BarGrid:
    """Uniform metric grid: bar k spans beats [k*beats_per_bar, (k+1)*...).

    bar_onsets_sec gives each bar start in wall-clock seconds (tempo-warped).
    """

    bar_onsets_sec: list[float]
    beats_per_bar: int

    def __post_init__(self):
        if self.beats_per_bar < 1:
            raise ValueError("beats_per_bar must be >= 1")
        for a, b in zip(self.bar_onsets_sec, self.bar_onsets_sec[1:]):
            if b <= a:
                raise ValueError("bar onsets must be strictly increasing")


class BarFlag(Enum):
    NEW = "new"
    CONT = "cont"
    PAD = "pad"


@dataclass(frozen=True)
class CPToken:
    bar: BarFlag
    position: int | None
    pitch: int | None
    duration: int | None

    def __post_init__(self):
        fields_none = [self.position is None, self.pitch is None, self.duration is None]
        if self.bar == BarFlag.PAD:
            if not all(fields_none):
                raise ValueError("PAD token must have all fields PAD")
        else:
            if any(fields_none):
                raise ValueError("non-PAD token must have all fields set")
            if not 0 <= self.position < POSITIONS_PER_BAR:
                raise ValueError(f"position {self.position} out of range")
            if not 0 <= self.pitch <= 127:
                raise ValueError(f"pitch {self.pitch} out of range")
            if not 1 <= self.duration <= MAX_DURATION:
                raise ValueError(f"duration {self.duration} out of range")

    @property
    def is_pad(self) -> bool:
        return self.bar == BarFlag.PAD


PAD_TOKEN = CPToken(bar=BarFlag.PAD, position=None, pitch=None, duration=None)


@dataclass
class TokenSequence:
    tokens: list[CPToken]
    pad_mask: list[bool]  # True where PAD

    def __post_init__(self):
        if len(self.tokens) != SEQ_LEN or len(self.pad_mask) != SEQ_LEN:
            raise ValueError(f"token sequence must have length {SEQ_LEN}")
        saw_pad = False
        for tok, padded in zip(self.tokens, self.pad_mask):
            if tok.is_pad != padded:
                raise ValueError("pad_mask inconsistent with tokens")
            if saw_pad and not tok.is_pad:
                raise ValueError("PAD tokens must form a suffix")
            saw_pad = saw_pad or tok.is_pad

    @property
    def n_real(self) -> int:
        return SEQ_LEN - sum(self.pad_mask)

    def field_ids(self):
        """Integer field columns for embedding lookup: [SEQ_LEN, 4] int64.

        Column order (bar, position, pitch, duration); 0 is PAD everywhere,
        real values are shifted up by one (duration keeps its natural 1..64).
        """
        import numpy as np

        out = np.zeros((SEQ_LEN, 4), dtype=np.int64)
        for i, t in enumerate(self.tokens):
            if t.is_pad:
                continue
            out[i, 0] = 1 if t.bar == BarFlag.NEW else 2
            out[i, 1] = t.position + 1
            out[i, 2] = t.pitch + 1
            out[i, 3] = t.duration
        return out


# --- Standard MIDI File decoding ------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MidiDecodeError("truncated MIDI file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.bytes(1)[0]

    def u16(self) -> int:
        b = self.bytes(2)
        return (b[0] << 8) | b[1]

    def u32(self) -> int:
        b = self.bytes(4)
        return (b[0] << 24) | (b[1] << 16) | (b[2] << 8) | b[3]

    def varint(self) -> int:
        value = 0
        for _ in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiDecodeError("variable-length quantity too long")


_DATA_BYTES = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


def _parse_track(reader: _Reader, length: int):
    """One MTrk chunk -> (note on/offs, tempo events, time signatures)."""
    end = reader.pos + length
    tick = 0
    running = None
    notes, tempos, timesigs = [], [], []
    while reader.pos < end:
        tick += reader.varint()
        status = reader.u8()
        if status < 0x80:
            if running is None:
                raise MidiDecodeError("data byte with no running status")
            reader.pos -= 1
            status = running
        if status == 0xFF:
            running = None
            meta = reader.u8()
            data = reader.bytes(reader.varint())
            if meta == 0x51 and len(data) == 3:
                tempos.append((tick, (data[0] << 16) | (data[1] << 8) | data[2]))
            elif meta == 0x58 and len(data) >= 2:
                timesigs.append((tick, data[0], 1 << data[1]))
            elif meta == 0x2F:
                tick_end = tick
                reader.pos = end
                return notes, tempos, timesigs, tick_end
        elif status in (0xF0, 0xF7):
            running = None
            reader.bytes(reader.varint())
        elif status >= 0x80:
            running = status
            kind, channel = status >> 4, status & 0x0F
            if kind not in _DATA_BYTES:
                raise MidiDecodeError(f"unexpected status byte 0x{status:02x}")
            data = reader.bytes(_DATA_BYTES[kind])
            if kind == 0x9:
                notes.append((tick, channel, data[0], data[1], data[1] > 0))
            elif kind == 0x8:
                notes.append((tick, channel, data[0], data[1], False))
    return notes, tempos, timesigs, tick


class _TempoMap:
    """Piecewise-constant tempo; integrates ticks to seconds."""

    def __init__(self, tempos: list[tuple[int, int]], division: int):
        self.division = division
        events = sorted(t for t in tempos)
        if not events or events[0][0] > 0:
            events.insert(0, (0, DEFAULT_TEMPO_US))
        self.ticks = [e[0] for e in events]
        self.us = [e[1] for e in events]
        self.sec_at = [0.0]
        for i in range(1, len(events)):
            dt = self.ticks[i] - self.ticks[i - 1]
            self.sec_at.append(
                self.sec_at[-1] + dt * self.us[i - 1] / (1e6 * division)
            )

    def tick_to_sec(self, tick: float) -> float:
        i = 0
        for j, t in enumerate(self.ticks):
            if t <= tick:
                i = j
            else:
                break
        return self.sec_at[i] + (tick - self.ticks[i]) * self.us[i] / (1e6 * self.division)


def parse_midi(uri: str | Path) -> tuple[list[NoteEvent], BarGrid]:
    """Decode a Standard MIDI File into note events and a bar grid.

    Note on/off pairs are matched FIFO per (channel, pitch); an unmatched
    note-off warns and is dropped, a note left open is closed at track end.
    Missing meta events fall back to 4/4 at 120 BPM.
    """
    data = Path(uri).read_bytes()
    reader = _Reader(data)
    if reader.bytes(4) != b"MThd":
        raise MidiDecodeError(f"not a MIDI file: {uri}")
    header_len = reader.u32()
    if header_len < 6:
        raise MidiDecodeError("malformed MThd chunk")
    fmt = reader.u16()
    n_tracks = reader.u16()
    division = reader.u16()
    reader.bytes(header_len - 6)
    if fmt not in (0, 1):
        raise MidiDecodeError(f"unsupported MIDI format {fmt}")
    if division & 0x8000:
        raise MidiDecodeError("SMPTE time division not supported")
    if division == 0:
        raise MidiDecodeError("zero ticks-per-quarter division")

    raw_notes, tempos, timesigs = [], [], []
    end_tick = 0
    for _ in range(n_tracks):
        chunk = reader.bytes(4)
        length = reader.u32()
        if chunk != b"MTrk":
            reader.bytes(length)
            continue
        notes, tts, tss, tick_end = _parse_track(reader, length)
        raw_notes.extend(notes)
        tempos.extend(tts)
        timesigs.extend(tss)
        end_tick = max(end_tick, tick_end)

    tempo_map = _TempoMap(tempos, division)

    # FIFO pairing per (channel, pitch)
    open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}
    finished: list[tuple[int, int, int, int]] = []  # onset, end, pitch, velocity
    for tick, channel, pitch, velocity, is_on in sorted(
        raw_notes, key=lambda e: (e[0], not e[4])
    ):
        key = (channel, pitch)
        if is_on:
            open_notes.setdefault(key, []).append((tick, velocity))
        else:
            stack = open_notes.get(key)
            if not stack:
                warnings.warn(
                    f"note-off with no matching note-on (pitch {pitch})",
                    UnmatchedNoteOff,
                )
                continue
            onset, vel = stack.pop(0)
            finished.append((onset, tick, pitch, vel))
    for (channel, pitch), stack in open_notes.items():
        for onset, vel in stack:
            if end_tick > onset:
                finished.append((onset, end_tick, pitch, vel))

    events = []
    for onset, end, pitch, vel in finished:
        if end <= onset:
            continue
        events.append(
            NoteEvent(
                onset_sec=tempo_map.tick_to_sec(onset),
                onset_beats=onset / division,
                pitch=pitch,
                duration_beats=(end - onset) / division,
                velocity=vel,
            )
        )
    events.sort(key=lambda n: (n.onset_beats, n.pitch))

    if timesigs:
        _, num, den = sorted(timesigs)[0]
        beats_per_bar = num * 4.0 / den
        if beats_per_bar != int(beats_per_bar):
            warnings.warn(f"fractional bar of {beats_per_bar} beats, rounding")
        beats_per_bar = max(1, int(round(beats_per_bar)))
    else:
        beats_per_bar = DEFAULT_BEATS_PER_BAR

    bar_ticks = beats_per_bar * division
    n_bars = max(1, -(-end_tick // bar_ticks) + 1)
    onsets = [tempo_map.tick_to_sec(k * bar_ticks) for k in range(int(n_bars))]
    return events, BarGrid(bar_onsets_sec=onsets, beats_per_bar=beats_per_bar)


# --- SMF writing (round-trip and synthetic-corpus support) -----------------


def _varint(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_midi(
    path: str | Path,
    notes: list[tuple[float, int, float, int]],
    division: int = 480,
    tempo_changes: list[tuple[float, float]] | None = None,
    time_signature: tuple[int, int] = (4, 4),
) -> None:
    """Write a format-0 SMF. Notes are (onset_beats, pitch, duration_beats, velocity)."""
    if tempo_changes is None:
        tempo_changes = [(0.0, 120.0)]
    events: list[tuple[int, int, bytes]] = []  # (tick, order, payload)
    num, den = time_signature
    dd = int(den).bit_length() - 1
    events.append((0, 0, bytes([0xFF, 0x58, 0x04, num, dd, 24, 8])))
    for beat, bpm in tempo_changes:
        us = int(round(60e6 / bpm))
        events.append(
            (int(round(beat * division)), 0,
             bytes([0xFF, 0x51, 0x03]) + us.to_bytes(3, "big"))
        )
    for onset, pitch, dur, vel in notes:
        on_tick = int(round(onset * division))
        off_tick = int(round((onset + dur) * division))
        events.append((on_tick, 2, bytes([0x90, pitch, vel])))
        events.append((off_tick, 1, bytes([0x80, pitch, 0])))
    events.sort(key=lambda e: (e[0], e[1]))

    body = bytearray()
    tick = 0
    for at, _, payload in events:
        body += _varint(at - tick)
        body += payload
        tick = at
    body += _varint(0) + bytes([0xFF, 0x2F, 0x00])

    header = b"MThd" + (6).to_bytes(4, "big") + (0).to_bytes(2, "big")
    header += (1).to_bytes(2, "big") + division.to_bytes(2, "big")
    track = b"MTrk" + len(body).to_bytes(4, "big") + bytes(body)
    Path(path).write_bytes(header + track)


# --- Alignment and tokenization --------------------------------------------


def align_segment(audio_start_sec: float, grid: BarGrid) -> int:
    """Index of the bar whose onset is nearest the audio start (ties earlier)."""
    if not grid.bar_onsets_sec:
        raise ValueError("bar grid is empty")
    best, best_dist = 0, abs(grid.bar_onsets_sec[0] - audio_start_sec)
    for i, onset in enumerate(grid.bar_onsets_sec[1:], start=1):
        d = abs(onset - audio_start_sec)
        if d < best_dist:
            best, best_dist = i, d
    return best


def _end_bar(grid: BarGrid, start_bar: int, end_sec: float | None) -> int | None:
    if end_sec is None:
        return None
    end = start_bar
    for i, onset in enumerate(grid.bar_onsets_sec):
        if onset < end_sec:
            end = i
    return max(end, start_bar)


def tokenize_cp(
    notes: list[NoteEvent],
    grid: BarGrid,
    start_bar: int,
    end_sec: float | None,
) -> TokenSequence:
    """Tokenize the notes of bars [start_bar .. last bar starting before end_sec].

    One token per note in (onset, pitch) order; the sequence is padded or
    truncated to exactly 512 tokens, truncation dropping the later notes.
    Passing end_sec=None takes every bar from start_bar on.
    """
    bpb = grid.beats_per_bar
    end_bar = _end_bar(grid, start_bar, end_sec)
    tokens: list[CPToken] = []
    prev_bar = None
    for note in sorted(notes, key=lambda n: (n.onset_beats, n.pitch)):
        bar = int(note.onset_beats // bpb)
        if bar < start_bar or (end_bar is not None and bar > end_bar):
            continue
        frac = (note.onset_beats - bar * bpb) / bpb
        position = min(int(frac * POSITIONS_PER_BAR), POSITIONS_PER_BAR - 1)
        duration = int(
            min(max(round(note.duration_beats * DURATION_UNITS_PER_BEAT), 1),
                MAX_DURATION)
        )
        flag = BarFlag.NEW if bar != prev_bar else BarFlag.CONT
        tokens.append(CPToken(bar=flag, position=position, pitch=note.pitch,
                              duration=duration))
        prev_bar = bar
        if len(tokens) == SEQ_LEN:
            break
    n_real = len(tokens)
    tokens.extend([PAD_TOKEN] * (SEQ_LEN - n_real))
    mask = [i >= n_real for i in range(SEQ_LEN)]
    return TokenSequence(tokens=tokens, pad_mask=mask)


def detokenize(sequence: TokenSequence, grid: BarGrid, start_bar: int) -> list[NoteEvent]:
    """Rebuild lattice-aligned notes from a token sequence.

    Each NEW flag advances one bar (the first token sits at start_bar), so
    re-tokenizing the result reproduces the sequence exactly.
    """
    bpb = grid.beats_per_bar
    onsets = grid.bar_onsets_sec
    notes: list[NoteEvent] = []
    bar = start_bar
    first = True
    for tok in sequence.tokens:
        if tok.is_pad:
            break
        if tok.bar == BarFlag.NEW and not first:
            bar += 1
        first = False
        onset_beats = (bar + tok.position / POSITIONS_PER_BAR) * bpb
        if bar + 1 < len(onsets):
            bar_sec = onsets[bar + 1] - onsets[bar]
            onset_sec = onsets[bar] + (tok.position / POSITIONS_PER_BAR) * bar_sec
        elif bar < len(onsets):
            bar_sec = onsets[-1] - onsets[-2] if len(onsets) > 1 else 2.0
            onset_sec = onsets[bar] + (tok.position / POSITIONS_PER_BAR) * bar_sec
        else:
            bar_sec = onsets[-1] - onsets[-2] if len(onsets) > 1 else 2.0
            onset_sec = onsets[-1] + (bar - len(onsets) + 1 + tok.position / POSITIONS_PER_BAR) * bar_sec
        notes.append(
            NoteEvent(
                onset_sec=onset_sec,
                onset_beats=onset_beats,
                pitch=tok.pitch,
                duration_beats=tok.duration / DURATION_UNITS_PER_BEAT,
                velocity=64,
            )
        )
    return notes


def tokens_for_segment(
    notes: list[NoteEvent],
    grid: BarGrid,
    audio_start_sec: float,
    segment_sec: float = 20.0,
) -> TokenSequence:
    """Align an audio segment to the grid and tokenize the bars it covers."""
    start_bar = align_segment(audio_start_sec, grid)
    return tokenize_cp(notes, grid, start_bar, audio_start_sec + segment_sec)
