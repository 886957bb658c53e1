import math

import numpy as np
import pytest

from inrstream.models import CoordGrid, ModelSpec, build_model, render
from inrstream.stream import (
    HEADER,
    ChannelConfig,
    ProgressiveDecoder,
    StreamError,
    UndecodableError,
    decodable_path,
    deserialize,
    packetize,
    progressive_decode,
    quantization_bound,
    quantize,
    reassemble,
    serialize,
    transmit,
)


def f32_model(spec, seed=0):
    return build_model(spec, seed, np.float32)


def chunk_spans(stream):
    spans, pos = [], HEADER.size
    for c in stream.chunks:
        n = len(c.to_bytes())
        spans.append((c.chunk_id, pos, pos + n))
        pos += n
    return spans


@pytest.mark.parametrize("family", ["siren", "fourier"])
def test_mode0_round_trip_bit_exact(family):
    spec = ModelSpec(family, width=10, hidden_layers=3, fourier_m=6)
    model = f32_model(spec, 3)
    back = deserialize(serialize(model, spec).to_bytes()).model
    assert back.equals(model)


def test_payload_size_h128_n4():
    spec = ModelSpec(width=128, hidden_layers=4)
    data = serialize(f32_model(spec), spec).to_bytes()
    assert len(data) == 4 * 66_819 + HEADER.size + 6 * 10


@pytest.mark.parametrize("mode,levels", [(1, 255), (2, 65535)])
def test_quantized_round_trip_within_bound(mode, levels):
    spec = ModelSpec(width=16, hidden_layers=2)
    model = f32_model(spec, 1)
    stream = serialize(model, spec, mode)
    back = deserialize(stream.to_bytes()).model
    for orig, rec in zip(model.layers, back.layers):
        vals = np.r_[orig.weight.ravel(), orig.bias]
        bound = quantization_bound(vals.min(), vals.max(), levels)
        err = np.abs(np.r_[rec.weight.ravel(), rec.bias] - vals)
        assert err.max() <= bound * (1 + 1e-5) + 1e-7


def test_quantize_constant_chunk():
    q, scale, offset = quantize(np.full(5, 0.25), 255)
    assert np.all(q == 0) and offset == 0.25


def test_u8_stream_is_smaller():
    spec = ModelSpec(width=32, hidden_layers=2)
    model = f32_model(spec)
    assert len(serialize(model, spec, 1)) < len(serialize(model, spec, 2)) < len(serialize(model, spec, 0))


def test_flipped_byte_flags_one_chunk():
    spec = ModelSpec(width=8, hidden_layers=2)
    stream = serialize(f32_model(spec), spec)
    data = bytearray(stream.to_bytes())
    cid, start, end = chunk_spans(stream)[2]
    data[(start + end) // 2] ^= 0x5A
    with pytest.raises(StreamError):
        deserialize(bytes(data))
    out = deserialize(bytes(data), allow_partial=True)
    assert out.corrupt == [cid] and out.missing == []


def test_chunks_in_any_order():
    spec = ModelSpec("fourier", width=8, hidden_layers=2, fourier_m=4)
    stream = serialize(f32_model(spec), spec)
    shuffled = stream.header_bytes() + b"".join(c.to_bytes() for c in reversed(stream.chunks))
    assert deserialize(shuffled).model.equals(deserialize(stream.to_bytes()).model)


def test_truncated_stream_reports_missing():
    spec = ModelSpec(width=8, hidden_layers=3)
    stream = serialize(f32_model(spec), spec)
    out = deserialize(stream.truncated(1).to_bytes(), allow_partial=True)
    assert out.missing == [2, 3, 4] and out.corrupt == []


def test_bad_magic_and_version():
    spec = ModelSpec(width=4, hidden_layers=1)
    data = bytearray(serialize(f32_model(spec), spec).to_bytes())
    bad = bytes(b"XXXX" + data[4:])
    with pytest.raises(StreamError, match="magic"):
        deserialize(bad)
    data[4] = 9
    with pytest.raises(StreamError, match="version"):
        deserialize(bytes(data))
    with pytest.raises(StreamError):
        deserialize(b"SPNR")


def test_serialize_rejects_wrong_spec():
    model = f32_model(ModelSpec(width=4, hidden_layers=1))
    with pytest.raises(ValueError):
        serialize(model, ModelSpec(width=5, hidden_layers=1))
    with pytest.raises(ValueError):
        serialize(model, ModelSpec(width=4, hidden_layers=1), quant_mode=7)


def test_channel_lossless_and_total_loss():
    spec = ModelSpec(width=16, hidden_layers=2)
    stream = serialize(f32_model(spec), spec)
    clean = transmit(stream, ChannelConfig(0.0, packet_size=64))
    assert clean.dropped == [] and clean.delivered == packetize(stream, 64)
    gone = transmit(stream, ChannelConfig(1.0, packet_size=64))
    assert gone.delivered == [] and len(gone.dropped) == gone.sent


def test_channel_deterministic_and_reorder():
    spec = ModelSpec(width=16, hidden_layers=2)
    stream = serialize(f32_model(spec), spec)
    cfg = ChannelConfig(0.3, packet_size=32, seed=5, reorder=True)
    a, b = transmit(stream, cfg), transmit(stream, cfg)
    assert a.delivered == b.delivered and a.dropped == b.dropped


def test_reassemble_round_trip():
    spec = ModelSpec(width=16, hidden_layers=2)
    stream = serialize(f32_model(spec), spec)
    packets = packetize(stream, 50)
    units = reassemble(packets[::-1])
    assert units[0xFF] == stream.header_bytes()
    assert units == {0xFF: stream.header_bytes(), **stream.chunk_bytes()}


def test_decodable_path_rules():
    spec = ModelSpec(width=4, hidden_layers=4)
    assert decodable_path({0, 1, 2, 3, 4, 5}, spec) == (0, 1, 2, 3, 4, 5)
    assert decodable_path({0, 1, 3, 5}, spec) == (0, 1, 5)
    assert decodable_path({0, 1, 3, 5}, spec, "skip") == (0, 1, 3, 5)
    assert decodable_path({0, 5}, spec) == (0, 5)
    with pytest.raises(UndecodableError):
        decodable_path({1, 2, 3, 4, 5}, spec)
    with pytest.raises(UndecodableError):
        decodable_path({0, 1, 2}, spec)


def test_progressive_decode_full_and_stage_one():
    spec = ModelSpec(width=8, hidden_layers=4)
    model = f32_model(spec, 2)
    chunks = deserialize(serialize(model, spec).to_bytes()).chunks
    full = progressive_decode(chunks, spec, 6, 7)
    assert full.stage == 5
    np.testing.assert_array_equal(full.image, render(model, CoordGrid(6, 7)))
    partial = {k: chunks[k] for k in (1, 6)}
    first = progressive_decode(partial, spec, 6, 7)
    assert first.stage == 1
    np.testing.assert_array_equal(first.image, render(model, CoordGrid(6, 7), (0, 5)))


def test_progressive_decode_gap_uses_prefix():
    spec = ModelSpec(width=8, hidden_layers=4)
    model = f32_model(spec, 2)
    chunks = deserialize(serialize(model, spec).to_bytes()).chunks
    got = progressive_decode({k: chunks[k] for k in (1, 2, 4, 6)}, spec, 5, 5)
    assert got.active == (0, 1, 5) and got.stage == 2
    np.testing.assert_array_equal(got.image, render(model, CoordGrid(5, 5), (0, 1, 5)))


def test_progressive_decoder_incremental():
    spec = ModelSpec(width=8, hidden_layers=3)
    model = f32_model(spec, 4)
    stream = serialize(model, spec)
    seen = []
    dec = ProgressiveDecoder(5, 6, on_update=lambda r: seen.append(r.stage))
    packets = packetize(stream, 40)
    # chunks before the header are held until it arrives
    dec.feed_all(packets[3:] + packets[:3])
    assert dec.latest.stage == 4
    np.testing.assert_array_equal(dec.latest.image, render(model, CoordGrid(5, 6)))
    assert seen == sorted(seen) and seen[-1] == 4


def test_progressive_decoder_rejects_corrupt_chunk():
    spec = ModelSpec(width=8, hidden_layers=2)
    stream = serialize(f32_model(spec), spec)
    packets = [bytearray(p) for p in packetize(stream, 4096)]
    packets[2][10] ^= 1
    dec = ProgressiveDecoder(4, 4)
    dec.feed_all(bytes(p) for p in packets)
    assert dec.rejected == [2]
    assert dec.latest.active == (0, 3)


def test_binomial_delivery_small():
    spec = ModelSpec(width=32, hidden_layers=3)
    stream = serialize(f32_model(spec), spec)
    d = transmit(stream, ChannelConfig(0.3, packet_size=16, seed=1))
    n = d.sent
    assert abs(d.delivered_fraction - 0.7) <= 3 * math.sqrt(0.21 / n)
