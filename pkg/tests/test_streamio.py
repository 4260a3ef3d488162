import numpy as np
import pytest

from sensorlab import streamio, synth


@pytest.fixture
def stream():
    return synth.build_corpus(31, 1, 3)[0]


def streams_equal(a, b) -> bool:
    if (a.subject_id, a.channels, a.traits, a.demographics) != \
            (b.subject_id, b.channels, b.traits, b.demographics):
        return False
    return all(
        d.date == e.date
        and np.array_equal(d.values, e.values)
        and np.array_equal(d.missing, e.missing)
        for d, e in zip(a.days, b.days))


def test_bytes_round_trip(stream):
    blob = streamio.stream_to_bytes(stream)
    back = streamio.stream_from_bytes(blob)
    assert streams_equal(stream, back)
    # serialization is deterministic
    assert blob == streamio.stream_to_bytes(back)


def test_file_round_trip(tmp_path, stream):
    path = tmp_path / "s.sfmb"
    streamio.write_stream(stream, path)
    assert streams_equal(stream, streamio.read_stream(path))


def test_corpus_round_trip(tmp_path):
    streams = synth.build_corpus(5, 4, 2)
    streamio.write_corpus(streams, tmp_path)
    back = streamio.read_corpus(tmp_path)
    assert len(back) == 4
    assert all(streams_equal(a, b) for a, b in zip(streams, back))


def test_read_corpus_missing_index_names_producer(tmp_path):
    with pytest.raises(FileNotFoundError, match="synth"):
        streamio.read_corpus(tmp_path / "nowhere")


def test_bad_magic_raises_with_offset(stream):
    blob = bytearray(streamio.stream_to_bytes(stream))
    blob[:4] = b"XXXX"
    with pytest.raises(streamio.StreamFormatError, match="byte 0"):
        streamio.stream_from_bytes(bytes(blob))


def test_truncated_payload_raises(stream):
    blob = streamio.stream_to_bytes(stream)
    with pytest.raises(streamio.StreamFormatError):
        streamio.stream_from_bytes(blob[: len(blob) // 2])


def test_unknown_version_raises(stream):
    blob = bytearray(streamio.stream_to_bytes(stream))
    blob[4:6] = (999).to_bytes(2, "little")
    with pytest.raises(streamio.StreamFormatError, match="version"):
        streamio.stream_from_bytes(bytes(blob))


def test_export_csv_parses_back(tmp_path, stream):
    path = tmp_path / "dump.csv"
    streamio.export_csv(stream, path)
    lines = path.read_text().strip().split("\n")
    n_days = len(stream.days)
    assert len(lines) == 1 + n_days * len(stream.channels) * 1440
    sid, date, minute, chan, value, miss = lines[1].split(",")
    assert int(sid) == stream.subject_id
    assert chan == stream.channels[0]
    got = float(value)
    assert got == stream.days[0].values[0, 0]
    assert int(miss) == int(stream.days[0].missing[0, 0])


def test_demographics_with_absent_fields_round_trip(tmp_path):
    # find a subject with at least one absent demographic field
    streams = synth.build_corpus(100, 40, 1)
    partial = [s for s in streams
               if len(s.demographics) < 4]
    assert partial, "expected some absent demographics at this scale"
    s = partial[0]
    back = streamio.stream_from_bytes(streamio.stream_to_bytes(s))
    assert back.demographics == s.demographics
