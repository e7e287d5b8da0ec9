"""Binary PGM (P5, 8-bit) frame I/O. Pixel byte ``v`` maps to the real ``v/255``."""
from pathlib import Path

import numpy as np

from .errors import DataError


def to_bytes(frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise DataError(f"frame must be 2-D, got shape {frame.shape}")
    h, w = frame.shape
    px = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def from_bytes(data):
    tokens = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace; '#' comments allowed
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise DataError(f"not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataError(f"only 8-bit PGM supported, maxval={maxval}")
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise DataError("truncated PGM pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def write_pgm(path, frame):
    Path(path).write_bytes(to_bytes(frame))


def read_pgm(path):
    return from_bytes(Path(path).read_bytes())


def read_frame_dir(directory):
    """Load ``frame_%06d.pgm`` files in index order as an ``(N, H, W)`` array."""
    files = sorted(Path(directory).glob("frame_*.pgm"))
    if not files:
        raise DataError(f"no frame_*.pgm files in {directory}")
    return np.stack([read_pgm(f) for f in files])
