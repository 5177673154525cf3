"""Dataset ingestion, image codecs, quality metrics, checkpoint persistence.

Datasets follow the transforms-json convention of the synthetic benchmark
scenes: a `transforms_<split>.json` next to per-frame PNGs, each frame
carrying a camera-to-world matrix and optionally a `time` stamp.

Checkpoints are a single binary container:

    magic "COGS" | uint32 LE version | uint64 LE header length |
    UTF-8 JSON header | raw little-endian float32 arrays in header order

The JSON header lists array names and shapes plus a config snapshot, the
iteration counter and the RNG state, so training resumes bit-exactly.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import correlate1d

from .errors import (
    BadMagicError,
    BadVersionError,
    CodecError,
    ConfigurationError,
    IngestionError,
    TruncatedCheckpointError,
)
from .gaussians import Camera

# -- images --------------------------------------------------------------------


def encode_png(image, path) -> None:
    """Write a [0,1] float image (H,W), (H,W,3) or (H,W,4) as 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def png_bytes(image) -> bytes:
    """PNG-encode into memory; deterministic for identical pixels."""
    import io

    arr = np.asarray(image, dtype=np.float64)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(path, grayscale: bool = False) -> np.ndarray:
    """Read a PNG into [0,1] floats; grayscale=True collapses to (H, W)."""
    try:
        with Image.open(path) as img:
            img = img.convert("L" if grayscale else "RGB")
            return np.asarray(img, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise CodecError(f"cannot decode {path}: {exc}") from exc


def read_image_size(path) -> Tuple[int, int]:
    try:
        with Image.open(path) as img:
            return img.size  # (width, height)
    except (UnidentifiedImageError, OSError) as exc:
        raise CodecError(f"cannot read {path}: {exc}") from exc


# -- metrics -------------------------------------------------------------------

PSNR_CAP_DB = 99.0


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all channels, capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(max_value**2 / mse))


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _ssim_kernel() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2.0
    x = np.arange(_SSIM_WINDOW) - half
    k = np.exp(-0.5 * (x / _SSIM_SIGMA) ** 2)
    return k / k.sum()


def _filt_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    pad = _SSIM_WINDOW // 2
    out = correlate1d(img, k, axis=0, mode="constant")
    out = correlate1d(out, k, axis=1, mode="constant")
    return out[pad:-pad, pad:-pad]


def _filt_valid_adjoint(grad: np.ndarray, k: np.ndarray, shape) -> np.ndarray:
    pad = _SSIM_WINDOW // 2
    full = np.zeros(shape)
    full[pad:-pad, pad:-pad] = grad
    full = correlate1d(full, k, axis=0, mode="constant")
    full = correlate1d(full, k, axis=1, mode="constant")
    return full


def _ssim_channel(x, y, k, want_grad):
    ux = _filt_valid(x, k)
    uy = _filt_valid(y, k)
    xx = _filt_valid(x * x, k)
    yy = _filt_valid(y * y, k)
    xy = _filt_valid(x * y, k)
    vx = xx - ux * ux
    vy = yy - uy * uy
    cxy = xy - ux * uy
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2
    a1 = 2 * ux * uy + c1
    a2 = 2 * cxy + c2
    b1 = ux * ux + uy * uy + c1
    b2 = vx + vy + c2
    s_map = (a1 * a2) / (b1 * b2)
    value = float(s_map.mean())
    if not want_grad:
        return value, None
    ds = np.full_like(s_map, 1.0 / s_map.size)
    da1 = ds * a2 / (b1 * b2)
    da2 = ds * a1 / (b1 * b2)
    db1 = -ds * s_map / b1
    db2 = -ds * s_map / b2
    dux = 2 * uy * da1 + 2 * ux * db1 - 2 * ux * db2 - 2 * uy * da2
    dxx = db2
    dxy = 2 * da2
    gx = _filt_valid_adjoint(dux, k, x.shape)
    gx += 2 * x * _filt_valid_adjoint(dxx, k, x.shape)
    gx += y * _filt_valid_adjoint(dxy, k, x.shape)
    return value, gx


def _as_channels(img) -> List[np.ndarray]:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return [img]
    if img.ndim == 3 and img.shape[2] in (1, 3):
        return [img[:, :, c] for c in range(img.shape[2])]
    raise ConfigurationError(f"expected single- or tri-channel image, got {img.shape}")


def ssim(a, b) -> float:
    """Structural similarity: 11x11 Gaussian window (sigma 1.5), unit range."""
    value, _ = ssim_with_grad(a, b, want_grad=False)
    return value


def ssim_with_grad(a, b, want_grad: bool = True):
    """SSIM value and, optionally, its gradient with respect to `a`."""
    ca = _as_channels(a)
    cb = _as_channels(b)
    if len(ca) != len(cb) or ca[0].shape != cb[0].shape:
        raise ConfigurationError("ssim inputs must share shape")
    h, w = ca[0].shape
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ConfigurationError(f"images must be at least {_SSIM_WINDOW} px per side")
    k = _ssim_kernel()
    vals, grads = [], []
    for x, y in zip(ca, cb):
        v, g = _ssim_channel(x, y, k, want_grad)
        vals.append(v)
        grads.append(g)
    value = float(np.mean(vals))
    if not want_grad:
        return value, None
    grad = np.stack(grads, axis=-1) / len(ca)
    if np.asarray(a).ndim == 2:
        grad = grad[:, :, 0]
    return value, grad


# -- datasets ------------------------------------------------------------------


@dataclass
class Frame:
    image_path: str
    camera: Camera
    time: float
    raw_time: float
    frame_id: str
    _image: Optional[np.ndarray] = field(default=None, repr=False)

    def image(self) -> np.ndarray:
        if self._image is None:
            img = decode_png(self.image_path)
            if img.shape[:2] != (self.camera.height, self.camera.width):
                raise IngestionError(
                    f"frame {self.frame_id}: image is {img.shape[1]}x{img.shape[0]}, "
                    f"expected {self.camera.width}x{self.camera.height}"
                )
            self._image = img
        return self._image


@dataclass
class Dataset:
    frames: List[Frame]
    split: str
    width: int
    height: int

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def times(self) -> np.ndarray:
        return np.array([f.time for f in self.frames])

    def distinct_times(self) -> np.ndarray:
        return np.unique(self.times)


def _resolve_image_path(root: str, file_path: str) -> str:
    candidate = os.path.normpath(os.path.join(root, file_path))
    if os.path.exists(candidate):
        return candidate
    if os.path.exists(candidate + ".png"):
        return candidate + ".png"
    raise IngestionError(f"frame image not found: {file_path}")


def load_dataset(root: str, split: str) -> Dataset:
    """Parse transforms_<split>.json; times are normalized onto [0, 1]."""
    meta_path = os.path.join(root, f"transforms_{split}.json")
    if not os.path.exists(meta_path):
        raise IngestionError(f"missing {meta_path}")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (json.JSONDecodeError, OSError) as exc:
        raise IngestionError(f"cannot parse {meta_path}: {exc}") from exc
    try:
        angle_x = float(meta["camera_angle_x"])
        frames_meta = meta["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"{meta_path} lacks camera_angle_x/frames: {exc}") from exc
    if not frames_meta:
        raise IngestionError(f"{meta_path} declares no frames")

    n = len(frames_meta)
    entries = []
    for i, fm in enumerate(frames_meta):
        fid = os.path.basename(str(fm.get("file_path", f"frame_{i}")))
        try:
            path = _resolve_image_path(root, fm["file_path"])
            pose = np.asarray(fm["transform_matrix"], dtype=np.float64).reshape(4, 4)
        except IngestionError:
            raise
        except Exception as exc:
            raise IngestionError(f"frame {fid}: {exc}") from exc
        if abs(np.linalg.det(pose)) < 1e-9:
            raise IngestionError(f"frame {fid}: non-invertible pose")
        raw_time = float(fm["time"]) if "time" in fm else (i / (n - 1) if n > 1 else 0.0)
        entries.append((fid, path, pose, raw_time))

    width, height = read_image_size(entries[0][1])
    fx = 0.5 * width / math.tan(0.5 * angle_x)
    raw = np.array([e[3] for e in entries])
    span = raw.max() - raw.min()
    times = (raw - raw.min()) / span if span > 0 else np.zeros(n)

    frames = [
        Frame(
            image_path=path,
            camera=Camera(width=width, height=height, fx=fx, fy=fx,
                          cx=width / 2.0, cy=height / 2.0, cam_to_world=pose),
            time=float(t),
            raw_time=float(rt),
            frame_id=fid,
        )
        for (fid, path, pose, rt), t in zip(entries, times)
    ]
    frames.sort(key=lambda f: f.time)  # stable: preserves file order among ties
    return Dataset(frames=frames, split=split, width=width, height=height)


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_MAGIC = b"COGS"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Versioned snapshot: config dict, named float32 arrays, RNG state."""

    config: dict
    arrays: "dict[str, np.ndarray]"
    iteration: int = 0
    rng_state: Optional[dict] = None
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        self.arrays = {
            name: np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
            for name, arr in self.arrays.items()
        }

    @property
    def stage(self) -> str:
        return self.config.get("stage", "dynamic")


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    header = {
        "config": checkpoint.config,
        "iteration": checkpoint.iteration,
        "rng_state": checkpoint.rng_state,
        "arrays": [
            {"name": name, "shape": list(arr.shape)}
            for name, arr in checkpoint.arrays.items()
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", checkpoint.version))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in checkpoint.arrays.values():
            fh.write(arr.astype("<f4", copy=False).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        raw = fh.read(4)
        if len(raw) < 4:
            raise TruncatedCheckpointError(f"{path}: truncated version field")
        (version,) = struct.unpack("<I", raw)
        if version != CHECKPOINT_VERSION:
            raise BadVersionError(f"{path}: unsupported version {version}")
        raw = fh.read(8)
        if len(raw) < 8:
            raise TruncatedCheckpointError(f"{path}: truncated header length")
        (hlen,) = struct.unpack("<Q", raw)
        blob = fh.read(hlen)
        if len(blob) < hlen:
            raise TruncatedCheckpointError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise TruncatedCheckpointError(f"{path}: unreadable header: {exc}") from exc
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = fh.read(count * 4)
            if len(data) < count * 4:
                raise TruncatedCheckpointError(
                    f"{path}: array {spec['name']} is truncated"
                )
            arrays[spec["name"]] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    return Checkpoint(
        config=header["config"],
        arrays=arrays,
        iteration=header["iteration"],
        rng_state=header.get("rng_state"),
        version=version,
    )


# -- loss log ------------------------------------------------------------------

LOSS_LOG_HEADER = "iter,photometric,norm,diff,rigid,rot,mask,total,lr"


class LossLog:
    """Append-only CSV of per-iteration loss terms."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(LOSS_LOG_HEADER + "\n")

    def write(self, iteration, photometric=0.0, norm=0.0, diff=0.0, rigid=0.0,
              rot=0.0, mask=0.0, lr=0.0):
        total = photometric + norm + diff + rigid + rot + mask
        self._fh.write(
            f"{iteration},{photometric:.8g},{norm:.8g},{diff:.8g},{rigid:.8g},"
            f"{rot:.8g},{mask:.8g},{total:.8g},{lr:.8g}\n"
        )

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
