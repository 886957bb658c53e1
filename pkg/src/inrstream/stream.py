"""Layer-chunked bitstream, lossy packet channel and progressive decoder.

Byte layout (all integers little-endian)::

    header  magic b"SPNR" | version u8 | quant_mode u8 | family u8 | n u8
            | h u16 | m u16 | omega0-or-sigma f32 | chunk_count u8
    chunk   chunk_id u8 | dtype u8 | rows u16 | cols u16
            | [scale f32 | offset f32]   (quantized dtypes only)
            | weight payload (row-major) | bias payload | crc32 u32
    packet  chunk_id u8 | frag_index u16 | frag_count u16 | payload

Chunk ids: 0 is the Fourier matrix (Fourier family only), ``i + 1`` is
layer ``L_i``. The CRC (zlib/IEEE) covers every chunk byte before it.
Quantized chunks store ``x ~= offset + q * scale`` with ``offset`` the
chunk minimum; the Fourier matrix is always sent as float32.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .models import CoordGrid, ModelSpec, render
from .nn import DenseLayer, ParamSet
from .rng import make_rng

MAGIC = b"SPNR"
VERSION = 1
HEADER = struct.Struct("<4sBBBBHHfB")
CHUNK_HEAD = struct.Struct("<BBHH")
QUANT_HEAD = struct.Struct("<ff")
PACKET_HEAD = struct.Struct("<BHH")
CRC = struct.Struct("<I")

HEADER_CHUNK_ID = 0xFF
ENCODING_CHUNK_ID = 0

QUANT_MODES = {0: "f32", 1: "u8", 2: "u16"}
QUANT_NAMES = {v: k for k, v in QUANT_MODES.items()}
# dtype code -> (numpy dtype, quantization levels or None)
DTYPES = {0: (np.dtype("<f4"), None), 1: (np.dtype("u1"), 255), 2: (np.dtype("<u2"), 65535)}
FAMILY_CODES = {"siren": 0, "fourier": 1}
FAMILY_NAMES = {v: k for k, v in FAMILY_CODES.items()}


class StreamError(ValueError):
    """Malformed or incomplete bitstream."""


class UndecodableError(StreamError):
    """The chunks needed for the shortest network are not available."""


@dataclass
class LayerChunk:
    chunk_id: int
    dtype: int
    weight: np.ndarray
    bias: np.ndarray = None
    scale: float = None
    offset: float = None

    @property
    def rows(self):
        return self.weight.shape[0]

    @property
    def cols(self):
        return self.weight.shape[1]

    def to_bytes(self):
        np_dtype, levels = DTYPES[self.dtype]
        parts = [CHUNK_HEAD.pack(self.chunk_id, self.dtype, self.rows, self.cols)]
        if levels is not None:
            parts.append(QUANT_HEAD.pack(self.scale, self.offset))
        parts.append(np.ascontiguousarray(self.weight, dtype=np_dtype).tobytes())
        if self.bias is not None:
            parts.append(np.ascontiguousarray(self.bias, dtype=np_dtype).tobytes())
        body = b"".join(parts)
        return body + CRC.pack(zlib.crc32(body))

    def dequantize(self):
        """``(weight, bias)`` as float32."""
        levels = DTYPES[self.dtype][1]
        if levels is None:
            w = self.weight.astype(np.float32)
            b = None if self.bias is None else self.bias.astype(np.float32)
            return w, b
        scale, offset = np.float64(self.scale), np.float64(self.offset)
        w = (offset + self.weight.astype(np.float64) * scale).astype(np.float32)
        b = None if self.bias is None else (offset + self.bias.astype(np.float64) * scale).astype(np.float32)
        return w, b


def quantize(values, levels):
    """Affine-quantize an array to ``levels + 1`` integer steps.

    Returns ``(q, scale, offset)`` with ``scale`` and ``offset`` rounded to
    float32 so encoder and decoder see identical constants.
    """
    values = np.asarray(values, dtype=np.float64)
    lo = float(np.float32(values.min()))
    hi = float(values.max())
    scale = float(np.float32((hi - lo) / levels))
    if scale <= 0 or not np.isfinite(scale):
        scale = 1.0
    q = np.clip(np.rint((values - lo) / scale), 0, levels)
    return q, scale, lo


def quantization_bound(chunk_min, chunk_max, levels):
    """Worst-case reconstruction error of :func:`quantize` (float rounding aside)."""
    return (chunk_max - chunk_min) / levels / 2


def _encode_layer(chunk_id, weight, bias, dtype_code):
    np_dtype, levels = DTYPES[dtype_code]
    if levels is None:
        return LayerChunk(chunk_id, dtype_code, weight.astype(np.float32),
                          None if bias is None else bias.astype(np.float32))
    flat = weight.ravel() if bias is None else np.concatenate([weight.ravel(), bias])
    # quantize from the float32 values that mode 0 would have sent
    q, scale, offset = quantize(flat.astype(np.float32), levels)
    qw = q[: weight.size].reshape(weight.shape).astype(np_dtype)
    qb = None if bias is None else q[weight.size:].astype(np_dtype)
    return LayerChunk(chunk_id, dtype_code, qw, qb, scale, offset)


def spec_param(spec):
    return spec.fourier_sigma if spec.family == "fourier" else spec.omega0


def expected_chunks(spec, quant_mode):
    """``chunk_id -> (dtype, rows, cols, has_bias)`` for a stream of ``spec``."""
    out = {}
    if spec.family == "fourier":
        out[ENCODING_CHUNK_ID] = (0, spec.fourier_m, 2, False)
    for i, (rows, cols) in enumerate(spec.layer_shapes()):
        out[i + 1] = (quant_mode, rows, cols, True)
    return out


def chunk_size(dtype, rows, cols, has_bias):
    np_dtype, levels = DTYPES[dtype]
    n = rows * cols + (rows if has_bias else 0)
    quant = QUANT_HEAD.size if levels is not None else 0
    return CHUNK_HEAD.size + quant + n * np_dtype.itemsize + CRC.size


@dataclass
class Bitstream:
    spec: ModelSpec
    quant_mode: int
    chunks: list

    def header_bytes(self):
        family = FAMILY_CODES[self.spec.family]
        m = self.spec.fourier_m if self.spec.family == "fourier" else 0
        return HEADER.pack(MAGIC, VERSION, self.quant_mode, family, self.spec.hidden_layers,
                           self.spec.width, m, spec_param(self.spec), len(self.chunks))

    def chunk_bytes(self):
        return {c.chunk_id: c.to_bytes() for c in self.chunks}

    def to_bytes(self):
        return self.header_bytes() + b"".join(c.to_bytes() for c in self.chunks)

    def __len__(self):
        return len(self.to_bytes())

    def truncated(self, stages):
        """Keep only the chunks a decoder needs to reach ``stages``.

        Stage 1 needs the encoding (if any), L0 and L_out; each further stage
        adds the next hidden layer.
        """
        n = self.spec.hidden_layers
        keep = {ENCODING_CHUNK_ID, 1, n + 2} | {i + 1 for i in range(1, min(stages, n + 1))}
        return Bitstream(self.spec, self.quant_mode, [c for c in self.chunks if c.chunk_id in keep])


def serialize(model, spec, quant_mode=0):
    """Encode ``model`` chunk by chunk; mode 0 float32, 1 u8 affine, 2 u16 affine."""
    if quant_mode not in QUANT_MODES:
        raise ValueError(f"quant_mode must be one of {sorted(QUANT_MODES)}")
    shapes = spec.layer_shapes()
    if len(model) != len(shapes) or any(l.weight.shape != s for l, s in zip(model.layers, shapes)):
        raise ValueError("model does not match spec")
    if (model.encoding is not None) != (spec.family == "fourier"):
        raise ValueError("encoding matrix presence does not match family")
    chunks = []
    if model.encoding is not None:
        chunks.append(_encode_layer(ENCODING_CHUNK_ID, model.encoding, None, 0))
    for i, layer in enumerate(model.layers):
        chunks.append(_encode_layer(i + 1, layer.weight, layer.bias, quant_mode))
    return Bitstream(spec, quant_mode, chunks)


def parse_header(data):
    if len(data) < HEADER.size:
        raise StreamError(f"truncated header: {len(data)} of {HEADER.size} bytes")
    magic, version, quant, family, n, h, m, param, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise StreamError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StreamError(f"unsupported version {version}")
    if quant not in QUANT_MODES:
        raise StreamError(f"unknown quant mode {quant}")
    if family not in FAMILY_NAMES:
        raise StreamError(f"unknown family code {family}")
    try:
        if family == FAMILY_CODES["fourier"]:
            spec = ModelSpec("fourier", h, n, fourier_m=m, fourier_sigma=float(param))
        else:
            spec = ModelSpec("siren", h, n, omega0=float(param))
    except ValueError as exc:
        raise StreamError(f"invalid model descriptor: {exc}") from None
    return spec, quant, count


def _try_chunk(data, pos, expected):
    """Parse a chunk at ``pos`` whose framing matches ``expected`` and whose CRC holds."""
    if pos + CHUNK_HEAD.size > len(data):
        return None
    cid, dtype, rows, cols = CHUNK_HEAD.unpack_from(data, pos)
    if expected.get(cid, (None,))[:3] != (dtype, rows, cols):
        return None
    has_bias = expected[cid][3]
    end = pos + chunk_size(dtype, rows, cols, has_bias)
    if end > len(data):
        return None
    body = data[pos:end - CRC.size]
    if zlib.crc32(body) != CRC.unpack_from(data, end - CRC.size)[0]:
        return None
    return _decode_chunk(body, cid, dtype, rows, cols, has_bias), end


def _decode_chunk(body, cid, dtype, rows, cols, has_bias):
    np_dtype, levels = DTYPES[dtype]
    off = CHUNK_HEAD.size
    scale = offset = None
    if levels is not None:
        scale, offset = QUANT_HEAD.unpack_from(body, off)
        off += QUANT_HEAD.size
    nw = rows * cols
    w = np.frombuffer(body, np_dtype, nw, off).reshape(rows, cols).copy()
    b = np.frombuffer(body, np_dtype, rows, off + nw * np_dtype.itemsize).copy() if has_bias else None
    return LayerChunk(cid, dtype, w, b, scale, offset)


def _crc_with_id(region, cid):
    body = bytes([cid]) + region[1:-CRC.size]
    return zlib.crc32(body) == CRC.unpack_from(region, len(region) - CRC.size)[0]


def _attribute(region, missing, expected):
    """Guess which missing chunk ids a corrupt byte range held."""
    sizes = {cid: chunk_size(*expected[cid]) for cid in missing}
    found = []
    while region:
        cid = region[0]
        if cid in sizes and cid not in found and sizes[cid] <= len(region):
            pick = cid
        else:
            fits = [c for c in sizes if c not in found and sizes[c] <= len(region)]
            # a damaged id byte: the CRC still identifies the original id
            pick = next((c for c in fits if sizes[c] == len(region) and _crc_with_id(region, c)), None)
            if pick is None and fits:
                exact = [c for c in fits if sizes[c] == len(region)]
                pick = (exact or fits)[0]
            if pick is None:
                break
        found.append(pick)
        region = region[sizes[pick]:]
    return found


@dataclass
class DecodedStream:
    spec: ModelSpec
    quant_mode: int
    chunks: dict
    missing: list = field(default_factory=list)
    corrupt: list = field(default_factory=list)
    stray_bytes: int = 0

    @property
    def complete(self):
        return not self.missing and not self.corrupt

    @property
    def model(self):
        if not self.complete:
            raise StreamError(f"incomplete stream: missing {self.missing}, corrupt {self.corrupt}")
        return assemble(self.chunks, self.spec)


def deserialize(data, allow_partial=False):
    """Parse a bitstream. Chunks may appear in any order.

    A damaged chunk is skipped by resynchronizing on the next chunk that
    frames and checksums correctly. Strict mode raises on any missing or
    corrupt chunk; partial mode reports them instead.
    """
    data = bytes(data)
    spec, quant, _count = parse_header(data)
    expected = expected_chunks(spec, quant)
    chunks = {}
    bad_regions = []
    pos = HEADER.size
    while pos < len(data):
        hit = _try_chunk(data, pos, expected)
        if hit is not None:
            chunk, end = hit
            if chunk.chunk_id in chunks:
                raise StreamError(f"duplicate chunk id {chunk.chunk_id}")
            chunks[chunk.chunk_id] = chunk
            pos = end
            continue
        start = pos
        pos += 1
        while pos < len(data) and _try_chunk(data, pos, expected) is None:
            pos += 1
        bad_regions.append(data[start:pos])

    missing = [cid for cid in expected if cid not in chunks]
    corrupt, stray = [], 0
    for region in bad_regions:
        ids = _attribute(region, [c for c in missing if c not in corrupt], expected)
        corrupt.extend(ids)
        stray += len(region) - sum(chunk_size(*expected[c]) for c in ids)
    missing = [cid for cid in missing if cid not in corrupt]
    out = DecodedStream(spec, quant, chunks, sorted(missing), sorted(corrupt), max(stray, 0))
    if not allow_partial and not out.complete:
        raise StreamError(f"incomplete stream: missing {out.missing}, corrupt {out.corrupt}")
    return out


def assemble(chunks, spec, fill_missing=False):
    """Build a ParamSet from decoded chunks; missing layers become zeros if allowed."""
    shapes = spec.layer_shapes()
    encoding = None
    if spec.family == "fourier":
        if ENCODING_CHUNK_ID not in chunks:
            raise UndecodableError("Fourier matrix chunk missing")
        encoding = chunks[ENCODING_CHUNK_ID].dequantize()[0]
    layers = []
    for i, (rows, cols) in enumerate(shapes):
        last = i == len(shapes) - 1
        act = "identity" if last else ("sine" if spec.family == "siren" else "relu")
        chunk = chunks.get(i + 1)
        if chunk is None:
            if not fill_missing:
                raise StreamError(f"layer L{i} missing")
            w, b = np.zeros((rows, cols), np.float32), np.zeros(rows, np.float32)
        else:
            w, b = chunk.dequantize()
        layers.append(DenseLayer(w, b, act, float(spec.omega0)))
    return ParamSet(layers, encoding)


# -- channel ---------------------------------------------------------------


@dataclass(frozen=True)
class ChannelConfig:
    loss_prob: float = 0.0
    packet_size: int = 1024
    seed: int = 0
    reorder: bool = False

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        if not 1 <= self.packet_size <= 65535:
            raise ValueError("packet_size must lie in [1, 65535]")


def packetize(stream, packet_size=1024):
    """Fragment the header (id 0xFF) and every chunk into packets."""
    units = [(HEADER_CHUNK_ID, stream.header_bytes())]
    units += [(c.chunk_id, c.to_bytes()) for c in stream.chunks]
    packets = []
    for cid, blob in units:
        count = max(1, -(-len(blob) // packet_size))
        if count > 0xFFFF:
            raise ValueError("too many fragments; raise packet_size")
        for k in range(count):
            piece = blob[k * packet_size:(k + 1) * packet_size]
            packets.append(PACKET_HEAD.pack(cid, k, count) + piece)
    return packets


def parse_packet(packet):
    if len(packet) < PACKET_HEAD.size:
        raise StreamError("packet shorter than its header")
    cid, idx, count = PACKET_HEAD.unpack_from(packet, 0)
    if count == 0 or idx >= count:
        raise StreamError(f"bad fragment {idx}/{count}")
    return cid, idx, count, bytes(packet[PACKET_HEAD.size:])


@dataclass
class Delivery:
    sent: int
    delivered: list
    dropped: list

    @property
    def delivered_fraction(self):
        return len(self.delivered) / self.sent if self.sent else 1.0


def transmit(stream, channel):
    """Send ``stream`` through an i.i.d. packet-erasure channel."""
    packets = packetize(stream, channel.packet_size)
    rng = make_rng(channel.seed, "channel")
    lost = rng.random(len(packets)) < channel.loss_prob
    delivered = [p for p, gone in zip(packets, lost) if not gone]
    if channel.reorder:
        order = rng.permutation(len(delivered))
        delivered = [delivered[i] for i in order]
    dropped = [i for i, gone in enumerate(lost) if gone]
    return Delivery(len(packets), delivered, dropped)


def reassemble(packets):
    """``chunk_id -> bytes`` for every unit whose fragments all arrived."""
    frags = {}
    counts = {}
    for packet in packets:
        cid, idx, count, payload = parse_packet(packet)
        frags.setdefault(cid, {})[idx] = payload
        counts[cid] = count
    return {
        cid: b"".join(parts[k] for k in range(counts[cid]))
        for cid, parts in frags.items()
        if len(parts) == counts[cid]
    }


# -- progressive decoding --------------------------------------------------


def decodable_path(available, spec, policy="prefix"):
    """Layer indices to evaluate given the available layer indices.

    ``prefix``: L0, the longest unbroken run L1 .. Lj, then L_out; this is
    the only path staged training ever optimized. ``skip``: every available
    hidden layer, gaps bridged (experimental).
    """
    out = spec.hidden_layers + 1
    if 0 not in available or out not in available:
        raise UndecodableError("L0 and the output layer are both required")
    hidden = [0]
    for j in range(1, out):
        if j in available:
            hidden.append(j)
        elif policy == "prefix":
            break
        elif policy != "skip":
            raise ValueError(f"unknown policy {policy!r}")
    return tuple(hidden) + (out,)


@dataclass
class ProgressiveImage:
    image: np.ndarray
    stage: int
    active: tuple


def progressive_decode(chunks, spec, height, width, policy="prefix"):
    """Render from whatever verified chunks are present.

    ``chunks`` maps chunk id to :class:`LayerChunk`. The reported stage is
    the number of layers on the path minus one, i.e. ``j + 1`` for the
    prefix ``L0 .. Lj``.
    """
    if spec.family == "fourier" and ENCODING_CHUNK_ID not in chunks:
        raise UndecodableError("Fourier matrix chunk missing")
    available = {cid - 1 for cid in chunks if cid != ENCODING_CHUNK_ID}
    active = decodable_path(available, spec, policy)
    model = assemble(chunks, spec, fill_missing=True)
    img = render(model, CoordGrid(height, width), active)
    return ProgressiveImage(img, len(active) - 1, active)


class ProgressiveDecoder:
    """Incremental receiver: feed packets in any order, read the latest image.

    ``on_update`` (if given) is called with each new :class:`ProgressiveImage`
    whenever a newly completed chunk changes the decodable path.
    """

    def __init__(self, height, width, policy="prefix", on_update=None):
        self.height = height
        self.width = width
        self.policy = policy
        self.on_update = on_update
        self.spec = None
        self.quant_mode = None
        self.expected = None
        self.chunks = {}
        self.rejected = []
        self.latest = None
        self.log = []
        self._frags = {}
        self._pending = {}

    def feed(self, packet):
        cid, idx, count, payload = parse_packet(packet)
        parts = self._frags.setdefault(cid, {})
        parts[idx] = payload
        if len(parts) != count:
            return self.latest
        blob = b"".join(parts[k] for k in range(count))
        del self._frags[cid]
        if cid == HEADER_CHUNK_ID:
            self.spec, self.quant_mode, _ = parse_header(blob)
            self.expected = expected_chunks(self.spec, self.quant_mode)
            self.log.append({"event": "header", "packets": count})
            pending, self._pending = self._pending, {}
            for pcid, pblob in pending.items():
                self._accept(pcid, pblob)
        elif self.spec is None:
            self._pending[cid] = blob
        else:
            self._accept(cid, blob)
        return self.latest

    def feed_all(self, packets):
        for p in packets:
            self.feed(p)
        return self.latest

    def _accept(self, cid, blob):
        hit = _try_chunk(blob, 0, self.expected)
        if hit is None or hit[1] != len(blob) or hit[0].chunk_id != cid:
            self.rejected.append(cid)
            self.log.append({"event": "reject", "chunk_id": cid})
            return
        self.chunks[cid] = hit[0]
        entry = {"event": "chunk", "chunk_id": cid}
        try:
            result = progressive_decode(self.chunks, self.spec, self.height, self.width, self.policy)
        except UndecodableError:
            self.log.append(entry)
            return
        entry["stage"] = result.stage
        self.log.append(entry)
        if self.latest is None or result.active != self.latest.active:
            self.latest = result
            if self.on_update is not None:
                self.on_update(result)
