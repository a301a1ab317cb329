"""File formats: NTF1 tensors, NNC1 network checkpoints, PGM/PPM images,
flat ``key=value`` text and CSV tables."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

NTF_MAGIC = b"NTF1"
NNC_MAGIC = b"NNC1"

_ACT_CODES = {"identity": 0, "leaky": 1, "sort_pairs": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_LAYER_CODES = {"dense": 0, "conv": 1}


class FormatError(ValueError):
    """Raised for malformed or truncated files."""


# ---------------------------------------------------------------------------
# NTF1
# ---------------------------------------------------------------------------


def ntf_dumps(array):
    # ascontiguousarray would promote rank 0 to rank 1
    a = np.require(np.asarray(array, dtype="<f8"), requirements="C")
    head = NTF_MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes(order="C")


def ntf_loads(buf):
    if buf[:4] != NTF_MAGIC:
        raise FormatError("not an NTF1 file (bad magic)")
    if len(buf) < 8:
        raise FormatError("truncated NTF1 header")
    (rank,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 4 * rank
    if len(buf) < off:
        raise FormatError("truncated NTF1 header")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + 8 * count:
        raise FormatError(f"NTF1 payload has {len(buf) - off} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)


def save_ntf(path, array):
    Path(path).write_bytes(ntf_dumps(array))


def load_ntf(path):
    return ntf_loads(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# PGM / PPM (8-bit, binary)
# ---------------------------------------------------------------------------


def _read_token(buf, pos):
    while True:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def load_pnm(path):
    """Read a P5 (grayscale) or P6 (color) file into [0, 1].

    Returns ``(H, W)`` for P5 and ``(3, H, W)`` for P6.
    """
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise FormatError("only 8-bit PNM files are supported")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    n = w * h * channels
    data = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos).astype(np.float64) / maxval
    if channels == 1:
        return data.reshape(h, w)
    return np.moveaxis(data.reshape(h, w, 3), -1, 0)


def save_pnm(path, image):
    """Write ``(H, W)`` as P5 or ``(3, H, W)`` as P6; values clipped to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.ndim == 2:
        head = b"P5\n%d %d\n255\n" % (q.shape[1], q.shape[0])
        body = q.tobytes()
    elif q.ndim == 3 and q.shape[0] == 3:
        head = b"P6\n%d %d\n255\n" % (q.shape[2], q.shape[1])
        body = np.ascontiguousarray(np.moveaxis(q, 0, -1)).tobytes()
    else:
        raise ValueError(f"cannot write image of shape {img.shape} as PGM/PPM")
    Path(path).write_bytes(head + body)


# ---------------------------------------------------------------------------
# key=value text
# ---------------------------------------------------------------------------


def parse_keyvalue(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_keyvalue(path):
    return parse_keyvalue(Path(path).read_text())


def dump_keyvalue(mapping):
    return "".join(f"{k}={v}\n" for k, v in mapping.items())


def save_keyvalue(path, mapping):
    Path(path).write_text(dump_keyvalue(mapping))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, float):
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# NNC1 checkpoints
# ---------------------------------------------------------------------------
#
# layout (little-endian):
#   magic "NNC1"
#   u32 residual flag, u32 layer count
#   per layer: u32 kind (0 dense, 1 conv), u32 out, u32 in, u32 kernel size,
#              u32 activation code, f64 activation slope, f64 averagedness
#   parameters: per layer weight (row-major) then bias, all f64


def nnc_dumps(net):
    layers = net.layers
    parts = [NNC_MAGIC, struct.pack("<II", int(net.residual), len(layers))]
    for layer in layers:
        act = layer.activation
        parts.append(
            struct.pack(
                "<IIIIIdd",
                _LAYER_CODES[layer.kind],
                layer.out_features,
                layer.in_features,
                layer.kernel_size,
                _ACT_CODES[act.kind],
                act.slope,
                act.alpha,
            )
        )
    parts.append(np.ascontiguousarray(net.get_params(), dtype="<f8").tobytes())
    return b"".join(parts)


def nnc_loads(buf):
    from .net import Activation, ConvLayer, DenseLayer, Network

    if buf[:4] != NNC_MAGIC:
        raise FormatError("not an NNC1 checkpoint (bad magic)")
    try:
        residual, count = struct.unpack_from("<II", buf, 4)
        off = 12
        specs = []
        rec = struct.calcsize("<IIIIIdd")
        for _ in range(count):
            specs.append(struct.unpack_from("<IIIIIdd", buf, off))
            off += rec
    except struct.error as exc:
        raise FormatError(f"truncated NNC1 header: {exc}") from None
    if off > len(buf) or (len(buf) - off) % 8:
        raise FormatError("truncated NNC1 parameter block")
    params = np.frombuffer(buf, dtype="<f8", offset=off).astype(np.float64)
    layers = []
    pos = 0
    for kind, out_f, in_f, ksize, act_code, slope, alpha in specs:
        if act_code not in _ACT_NAMES:
            raise FormatError(f"unknown activation code {act_code}")
        act = Activation(_ACT_NAMES[act_code], slope=slope, alpha=alpha)
        if kind == _LAYER_CODES["dense"]:
            wshape = (out_f, in_f)
            cls = DenseLayer
        elif kind == _LAYER_CODES["conv"]:
            wshape = (out_f, in_f, ksize, ksize)
            cls = ConvLayer
        else:
            raise FormatError(f"unknown layer kind {kind}")
        nw = int(np.prod(wshape))
        if pos + nw + out_f > params.size:
            raise FormatError("truncated NNC1 parameter block")
        w = params[pos : pos + nw].reshape(wshape)
        pos += nw
        b = params[pos : pos + out_f]
        pos += out_f
        layers.append(cls(w.copy(), b.copy(), act))
    if pos != params.size:
        raise FormatError(f"NNC1 has {params.size - pos} trailing parameters")
    return Network(layers, residual=bool(residual))


def save_checkpoint(path, net):
    Path(path).write_bytes(nnc_dumps(net))


def load_checkpoint(path):
    return nnc_loads(Path(path).read_bytes())
