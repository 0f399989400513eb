"""File formats: 16-bit PGM raw frames with JSON sidecars, PFM float images,
8-bit PNG previews and burst directories."""

import json
import os
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import Burst, load_trajectory, save_trajectory
from .raw import RawFrame

PNG_GAMMA = 2.2


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# --- PGM -----------------------------------------------------------------

def _read_header_tokens(buf, count):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated header")
        tokens.append(buf[start:pos].decode("ascii"))
    return tokens, pos + 1  # one whitespace byte separates header and data


def write_pgm(path, counts, maxval):
    counts = np.asarray(counts)
    h, w = counts.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(counts.astype(dtype).tobytes())


def read_pgm(path):
    """Return ``(counts, maxval)`` of a binary PGM."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    (w, h, maxval), pos = _read_header_tokens(buf[2:], 3)
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(buf[2 + pos:], dtype=dtype, count=w * h)
    return data.reshape(h, w).astype(np.int64), maxval


def save_raw(path, frame):
    """Write ``frame`` as PGM scaled by ``2**bit_depth - 1`` plus a ``.json`` sidecar."""
    path = Path(path)
    white = (1 << frame.bit_depth) - 1
    counts = np.rint(frame.data * white).astype(np.int64)
    write_pgm(path, counts, white)
    write_json(path.with_suffix(".json"),
               {"cfa": frame.cfa, "bit_depth": frame.bit_depth, "white_level": white})


def load_raw(path):
    path = Path(path)
    counts, maxval = read_pgm(path)
    side = path.with_suffix(".json")
    meta = read_json(side) if side.exists() else {}
    white = int(meta.get("white_level", maxval))
    bit_depth = int(meta.get("bit_depth", max(1, white.bit_length())))
    return RawFrame(counts / white, meta.get("cfa", "RGGB"), bit_depth)


# --- PFM -----------------------------------------------------------------

def write_pfm(path, img):
    """Little-endian PFM (scale -1.0); 1- or 3-channel float32, rows stored bottom-up."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise DataError(f"PFM holds 1 or 3 channels, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path):
    buf = Path(path).read_bytes()
    tag = buf[:2]
    if tag not in (b"PF", b"Pf"):
        raise DataError(f"{path}: not a PFM file")
    (w, h, scale), pos = _read_header_tokens(buf[2:], 3)
    w, h, scale = int(w), int(h), float(scale)
    ch = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf[2 + pos:], dtype=dtype, count=w * h * ch)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64) * abs(scale)


# --- PNG -----------------------------------------------------------------

def write_png(path, img):
    """8-bit preview with a 1/2.2 display gamma."""
    from PIL import Image

    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) ** (1.0 / PNG_GAMMA)
    Image.fromarray(np.rint(img * 255.0).astype(np.uint8)).save(path)


def read_image(path):
    """Load a linear image from PFM, or from PNG/JPEG/TIFF undoing a 2.2 gamma."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise DataError(f"{path}: unreadable image ({exc})") from exc
    return arr ** PNG_GAMMA


# --- bursts --------------------------------------------------------------

def save_burst(directory, burst):
    """Write ``frame_NNN.pgm`` (+ sidecars), optional ``valid_NNN.pgm`` masks,
    ``trajectory.json`` and ``burst.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(burst.frames):
        save_raw(directory / f"frame_{i:03d}.pgm", frame)
        if burst.validity is not None:
            write_pgm(directory / f"valid_{i:03d}.pgm", burst.validity[i].astype(np.int64), 1)
    save_trajectory(burst.trajectory, directory / "trajectory.json")
    f0 = burst.frames[0]
    write_json(directory / "burst.json", {
        "has_validity": burst.validity is not None,
        "n_frames": len(burst),
        "height": f0.height,
        "width": f0.width,
        "cfa": f0.cfa,
        "bit_depth": f0.bit_depth,
        "meta": {k: burst.meta[k] for k in sorted(burst.meta)},
    })


def load_burst(directory):
    directory = Path(directory)
    info_path = directory / "burst.json"
    if not info_path.exists():
        raise DataError(f"{directory}: missing burst.json")
    info = read_json(info_path)
    frames = tuple(load_raw(directory / f"frame_{i:03d}.pgm") for i in range(int(info["n_frames"])))
    traj = load_trajectory(directory / "trajectory.json")
    masks = None
    if info.get("has_validity"):
        masks = tuple(read_pgm(directory / f"valid_{i:03d}.pgm")[0] > 0 for i in range(len(frames)))
    return Burst(frames, traj, dict(info.get("meta", {})), masks)


def list_images(src_dir):
    exts = {".pfm", ".png", ".jpg", ".jpeg", ".tif", ".tiff"}
    return sorted(p for p in Path(src_dir).iterdir() if p.suffix.lower() in exts and p.is_file())


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
