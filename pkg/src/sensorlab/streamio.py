"""Binary container for subject streams, plus CSV export.

Format (little-endian, version 1):

    magic   4 bytes  b"SFMB"
    version u16
    subject u64
    demographics: u8 count, then per field: key str, type u8 (0 float / 1 str), payload
    traits:       u16 count, then per trait: key str, f64
    channels:     u16 count, then names
    days:         u32 count, then per day:
                    date ordinal u32
                    values  C*1440 f64
                    mask    ceil(C*1440/8) bytes (numpy packbits order)

Strings are u16 length + utf-8 bytes. Floats round-trip bit-exactly, so a
write/read cycle reproduces the stream byte for byte.
"""

from __future__ import annotations

import datetime as dt
import struct
from pathlib import Path

import numpy as np

from .synth import DayGrid, SubjectStream

MAGIC = b"SFMB"
VERSION = 1
MINUTES = 1440


class StreamFormatError(ValueError):
    """Container is malformed; message carries the byte offset."""


def _pack_str(out: bytearray, s: str) -> None:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise ValueError("string too long for container")
    out += struct.pack("<H", len(b))
    out += b


def stream_to_bytes(stream: SubjectStream) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack("<Q", stream.subject_id)

    demo = stream.demographics
    out += struct.pack("<B", len(demo))
    for key in sorted(demo):
        _pack_str(out, key)
        val = demo[key]
        if isinstance(val, str):
            out += struct.pack("<B", 1)
            _pack_str(out, val)
        else:
            out += struct.pack("<B", 0)
            out += struct.pack("<d", float(val))

    out += struct.pack("<H", len(stream.traits))
    for key in sorted(stream.traits):
        _pack_str(out, key)
        out += struct.pack("<d", float(stream.traits[key]))

    out += struct.pack("<H", len(stream.channels))
    for name in stream.channels:
        _pack_str(out, name)

    out += struct.pack("<I", len(stream.days))
    n_cells = len(stream.channels) * MINUTES
    for day in stream.days:
        if day.values.shape != (len(stream.channels), MINUTES):
            raise ValueError(
                f"day grid shape {day.values.shape} does not match "
                f"{len(stream.channels)} channels x {MINUTES} minutes"
            )
        out += struct.pack("<I", day.date.toordinal())
        out += np.ascontiguousarray(day.values, dtype="<f8").tobytes()
        bits = np.packbits(day.missing.reshape(-1))
        expect = (n_cells + 7) // 8
        assert bits.size == expect
        out += bits.tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise StreamFormatError(
                f"truncated container: needed {n} bytes at byte {self.off}, "
                f"file has {len(self.buf)}"
            )
        b = self.buf[self.off:self.off + n]
        self.off += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def string(self) -> str:
        n = self.unpack("<H")
        return self.take(n).decode("utf-8")


def stream_from_bytes(buf: bytes) -> SubjectStream:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise StreamFormatError("bad magic at byte 0: not a stream container")
    version = r.unpack("<H")
    if version != VERSION:
        raise StreamFormatError(
            f"unsupported container version {version} at byte 4")
    subject_id = r.unpack("<Q")

    demo: dict = {}
    for _ in range(r.unpack("<B")):
        key = r.string()
        kind = r.unpack("<B")
        if kind == 0:
            demo[key] = r.unpack("<d")
        elif kind == 1:
            demo[key] = r.string()
        else:
            raise StreamFormatError(
                f"unknown demographic field type {kind} at byte {r.off - 1}")

    traits: dict = {}
    for _ in range(r.unpack("<H")):
        key = r.string()
        traits[key] = r.unpack("<d")

    names = tuple(r.string() for _ in range(r.unpack("<H")))
    n_cells = len(names) * MINUTES
    mask_bytes = (n_cells + 7) // 8

    days = []
    for _ in range(r.unpack("<I")):
        ordinal = r.unpack("<I")
        vals = np.frombuffer(r.take(n_cells * 8), dtype="<f8").astype(np.float64)
        bits = np.frombuffer(r.take(mask_bytes), dtype=np.uint8)
        mask = np.unpackbits(bits)[:n_cells].astype(bool)
        days.append(DayGrid(
            date=dt.date.fromordinal(ordinal),
            values=vals.reshape(len(names), MINUTES),
            missing=mask.reshape(len(names), MINUTES),
        ))
    if r.off != len(buf):
        raise StreamFormatError(
            f"{len(buf) - r.off} trailing bytes at byte {r.off}")
    return SubjectStream(subject_id=subject_id, channels=names, traits=traits,
                         demographics=demo, days=days)


def write_stream(stream: SubjectStream, path) -> None:
    Path(path).write_bytes(stream_to_bytes(stream))


def read_stream(path) -> SubjectStream:
    return stream_from_bytes(Path(path).read_bytes())


def write_corpus(streams, outdir) -> None:
    outdir = Path(outdir)
    (outdir / "streams").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in streams:
        fname = f"s{s.subject_id:08d}.sfmb"
        write_stream(s, outdir / "streams" / fname)
        lines.append(fname)
    (outdir / "corpus_index.txt").write_text("\n".join(lines) + "\n")


def read_corpus(outdir) -> list[SubjectStream]:
    outdir = Path(outdir)
    index = outdir / "corpus_index.txt"
    if not index.exists():
        raise FileNotFoundError(
            f"no corpus_index.txt under {outdir}; generate a corpus first "
            f"(sensorlab synth)")
    names = index.read_text().split()
    return [read_stream(outdir / "streams" / n) for n in names]


def export_csv(stream: SubjectStream, path) -> None:
    """Long-format dump: subject_id,date,minute,channel,value,missing."""
    with open(path, "w") as fh:
        fh.write("subject_id,date,minute,channel,value,missing\n")
        for day in stream.days:
            iso = day.date.isoformat()
            for ci, name in enumerate(stream.channels):
                vals = day.values[ci]
                miss = day.missing[ci]
                for m in range(MINUTES):
                    fh.write(
                        f"{stream.subject_id},{iso},{m},{name},"
                        f"{float(vals[m])!r},{int(miss[m])}\n")
