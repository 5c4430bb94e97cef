"""Patch descriptors: pooling, feature backends and the on-disk feature cache."""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BackendUnavailable, CacheCorrupt, DataError, DimensionMismatch, InferenceFailure
from .preprocess import Patch, color_stretch, extract_patch, load_image

log = logging.getLogger(__name__)

FEATURE_DIM = 2048
CONV5_SHAPE = (7, 7, FEATURE_DIM)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # float32, (dim,)
    backend_id: str
    image_id: str = ""
    x: int = 0
    y: int = 0

    @property
    def key(self) -> tuple[str, int, int, str]:
        return (self.image_id, self.x, self.y, self.backend_id)


def global_max_pool(block: np.ndarray) -> np.ndarray:
    """Collapse an (H, W, C) activation block to C values by taking the spatial maximum."""
    block = np.asarray(block)
    if block.ndim != 3:
        raise DimensionMismatch(f"activation block must be (H, W, C), got {block.shape}")
    return block.reshape(-1, block.shape[2]).max(axis=0)


def global_avg_pool(block: np.ndarray) -> np.ndarray:
    block = np.asarray(block)
    if block.ndim != 3:
        raise DimensionMismatch(f"activation block must be (H, W, C), got {block.shape}")
    return block.reshape(-1, block.shape[2]).mean(axis=0)


POOLS = {"max": global_max_pool, "avg": global_avg_pool}


def quantize(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


class StubBackend:
    """Model-free backend: a keyed hash of the 8-bit patch seeds a PCG64 generator.

    The vector holds 2048 float32 draws from [0, 1). Identical patches give
    identical vectors and nothing else is promised; similar patches are not
    mapped to similar vectors.
    """

    key = b"benthoscan-stub"
    version = 1

    def __init__(self, dim: int = FEATURE_DIM):
        self.dim = dim
        self.backend_id = f"stub-v{self.version}-d{dim}"

    def vector_for_bytes(self, data: bytes) -> np.ndarray:
        digest = hashlib.blake2b(data, key=self.key, digest_size=32).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
        return rng.random(self.dim, dtype=np.float32)

    def extract(self, patch: Patch) -> FeatureVector:
        q = quantize(patch.pixels)
        header = struct.pack("<3I", *q.shape)
        x, y = patch.center
        return FeatureVector(self.vector_for_bytes(header + q.tobytes()), self.backend_id, patch.source_image_id, x, y)

    def describe(self) -> dict:
        return {"backend": "stub", "backend_id": self.backend_id, "dim": self.dim}


class ResidualBackend:
    """Runs a residual network exported to ONNX up to its last convolutional block.

    ``output_name`` selects the conv5 activation tensor (default: the graph's
    first output), expected as (1, C, 7, 7) for ``layout="NCHW"`` or
    (1, 7, 7, C) for ``"NHWC"``. Inputs are RGB in [0, 1], normalised with the
    ImageNet mean/std the published ResNet-50 weights were trained with.
    """

    def __init__(
        self,
        model_path: str | Path,
        output_name: str | None = None,
        layout: str = "NCHW",
        pool: str = "max",
        mean: Sequence[float] = IMAGENET_MEAN,
        std: Sequence[float] = IMAGENET_STD,
        expected_dim: int | None = FEATURE_DIM,
    ):
        model_path = Path(model_path)
        if not model_path.is_file():
            raise BackendUnavailable(f"model file {model_path} not found")
        if pool not in POOLS:
            raise BackendUnavailable(f"unknown pooling {pool!r}")
        if layout not in ("NCHW", "NHWC"):
            raise BackendUnavailable(f"unknown layout {layout!r}")
        try:
            import onnxruntime as ort
        except ImportError:
            raise BackendUnavailable("onnxruntime is not installed; `pip install onnxruntime`") from None

        opts = ort.SessionOptions()
        opts.intra_op_num_threads = 1
        opts.inter_op_num_threads = 1
        try:
            self.session = ort.InferenceSession(str(model_path), opts, providers=["CPUExecutionProvider"])
        except Exception as exc:  # onnxruntime raises its own exception zoo
            raise BackendUnavailable(f"cannot load {model_path}: {exc}") from None

        self.input_name = self.session.get_inputs()[0].name
        self.output_name = output_name or self.session.get_outputs()[0].name
        self.layout = layout
        self.pool = pool
        self.mean = np.asarray(mean, dtype=np.float32).reshape(1, 1, 3)
        self.std = np.asarray(std, dtype=np.float32).reshape(1, 1, 3)
        self.expected_dim = expected_dim
        sha = hashlib.sha256(model_path.read_bytes()).hexdigest()[:16]
        norm = hashlib.sha256(self.mean.tobytes() + self.std.tobytes()).hexdigest()[:8]
        self.backend_id = f"residual-{sha}-{self.output_name}-{layout}-{pool}-{norm}"
        self.model_path = str(model_path)

    def input_tensor(self, patch: Patch) -> np.ndarray:
        x = (patch.pixels.astype(np.float32) - self.mean) / self.std
        return np.ascontiguousarray(x.transpose(2, 0, 1)[None])  # (1, 3, H, W)

    def activations(self, patch: Patch) -> np.ndarray:
        try:
            (out,) = self.session.run([self.output_name], {self.input_name: self.input_tensor(patch)})
        except Exception as exc:
            raise InferenceFailure(f"inference failed for patch at {patch.center}: {exc}") from None
        out = np.asarray(out)
        if out.ndim != 4 or out.shape[0] != 1:
            raise InferenceFailure(f"expected a (1, ., ., .) activation tensor, got {out.shape}")
        block = out[0].transpose(1, 2, 0) if self.layout == "NCHW" else out[0]
        if self.expected_dim is not None and block.shape[2] != self.expected_dim:
            raise DimensionMismatch(f"activation block has {block.shape[2]} channels, expected {self.expected_dim}")
        if not np.all(np.isfinite(block)):
            raise InferenceFailure("network produced non-finite activations")
        return block

    def extract(self, patch: Patch) -> FeatureVector:
        values = POOLS[self.pool](self.activations(patch)).astype(np.float32)
        x, y = patch.center
        return FeatureVector(values, self.backend_id, patch.source_image_id, x, y)

    def describe(self) -> dict:
        return {
            "backend": "residual",
            "backend_id": self.backend_id,
            "model": self.model_path,
            "output": self.output_name,
            "layout": self.layout,
            "pool": self.pool,
            "mean": self.mean.ravel().tolist(),
            "std": self.std.ravel().tolist(),
        }


def make_backend(name: str, model_path: str | None = None, **kwargs):
    if name == "stub":
        return StubBackend()
    if name == "residual":
        if not model_path:
            raise BackendUnavailable("the residual backend needs --model")
        return ResidualBackend(model_path, **kwargs)
    raise BackendUnavailable(f"unknown backend {name!r}")


def extract(backend, patch: Patch) -> FeatureVector:
    return backend.extract(patch)


# --- feature cache --------------------------------------------------------
#
# little-endian; header: b"BSFC", u16 version, u16 dim
# record: u16 key length, key (utf-8), dim x f32, u32 crc32 of everything before it

MAGIC = b"BSFC"
VERSION = 1
_HEADER = struct.Struct("<4sHH")
_KEYLEN = struct.Struct("<H")
_CRC = struct.Struct("<I")
_SEP = "\x1f"


def encode_key(image_id: str, x: int, y: int, backend_id: str) -> bytes:
    return _SEP.join((image_id, str(int(x)), str(int(y)), backend_id)).encode("utf-8")


def decode_key(raw: bytes) -> tuple[str, int, int, str]:
    image_id, x, y, backend_id = raw.decode("utf-8").split(_SEP)
    return image_id, int(x), int(y), backend_id


class FeatureStore:
    """Append-only feature file keyed by (image_id, x, y, backend_id).

    Writes go through one lock; records already committed are read with
    positional reads and never change.
    """

    def __init__(self, path: str | Path, dim: int = FEATURE_DIM):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._offsets: dict[tuple[str, int, int, str], int] = {}
        if self.path.exists() and self.path.stat().st_size > 0:
            self._load()
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.dim = dim
            with open(self.path, "wb") as fh:
                fh.write(_HEADER.pack(MAGIC, VERSION, dim))

    def _load(self) -> None:
        data = self.path.read_bytes()
        if len(data) < _HEADER.size:
            raise CacheCorrupt(f"{self.path}: truncated header")
        magic, version, dim = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise CacheCorrupt(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise CacheCorrupt(f"{self.path}: unsupported version {version}")
        self.dim = dim
        vec_bytes = 4 * dim
        pos = _HEADER.size
        while pos < len(data):
            if pos + _KEYLEN.size > len(data):
                raise CacheCorrupt(f"{self.path}: truncated record at byte {pos}")
            (klen,) = _KEYLEN.unpack_from(data, pos)
            end = pos + _KEYLEN.size + klen + vec_bytes + _CRC.size
            if end > len(data):
                raise CacheCorrupt(f"{self.path}: truncated record at byte {pos}")
            body = data[pos:end - _CRC.size]
            (crc,) = _CRC.unpack_from(data, end - _CRC.size)
            if zlib.crc32(body) != crc:
                raise CacheCorrupt(f"{self.path}: checksum mismatch in record at byte {pos}")
            key = decode_key(body[_KEYLEN.size:_KEYLEN.size + klen])
            self._offsets[key] = pos + _KEYLEN.size + klen
            pos = end

    def __len__(self) -> int:
        return len(self._offsets)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._offsets

    def keys(self) -> list[tuple[str, int, int, str]]:
        return list(self._offsets)

    def append(self, fv: FeatureVector) -> bool:
        """Write ``fv`` unless its key is already present; returns whether it was written."""
        values = np.asarray(fv.values, dtype="<f4")
        if values.shape != (self.dim,):
            raise DimensionMismatch(f"vector has shape {values.shape}, store holds {self.dim}-d vectors")
        if not np.all(np.isfinite(values)):
            raise DataError(f"refusing to cache a non-finite vector for {fv.key}")
        raw_key = encode_key(*fv.key)
        body = _KEYLEN.pack(len(raw_key)) + raw_key + values.tobytes()
        with self._lock:
            if fv.key in self._offsets:
                return False
            with open(self.path, "ab") as fh:
                start = fh.tell()
                fh.write(body + _CRC.pack(zlib.crc32(body)))
            self._offsets[fv.key] = start + _KEYLEN.size + len(raw_key)
        return True

    def get(self, key) -> np.ndarray:
        key = tuple(key)
        try:
            offset = self._offsets[key]
        except KeyError:
            raise DataError(f"no cached feature for {key}") from None
        fd = os.open(self.path, os.O_RDONLY)
        try:
            raw = os.pread(fd, 4 * self.dim, offset)
        finally:
            os.close(fd)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)

    def matrix(self, keys: Iterable) -> np.ndarray:
        keys = list(keys)
        out = np.empty((len(keys), self.dim), dtype=np.float32)
        with open(self.path, "rb") as fh:
            for i, key in enumerate(keys):
                key = tuple(key)
                if key not in self._offsets:
                    raise DataError(f"no cached feature for {key}")
                fh.seek(self._offsets[key])
                out[i] = np.frombuffer(fh.read(4 * self.dim), dtype="<f4")
        return out


@dataclass
class CacheRun:
    store: FeatureStore
    n_new: int
    n_images_processed: int
    seconds: float
    notes: list[str] = field(default_factory=list)

    @property
    def images_per_hour(self) -> float:
        return 3600.0 * self.n_images_processed / self.seconds if self.seconds > 0 else float("inf")


def _image_features(backend, image, points, stretch: bool) -> list[FeatureVector]:
    pixels = load_image(image.file_path)
    if pixels.shape[:2] != (image.height_px, image.width_px):
        raise DataError(
            f"image {image.image_id!r} is {pixels.shape[1]}x{pixels.shape[0]}, "
            f"manifest says {image.width_px}x{image.height_px}"
        )
    if stretch:
        pixels = color_stretch(pixels)
    return [backend.extract(extract_patch(pixels, p.x_px, p.y_px, image.image_id)) for p in points]


def cache_features(dataset, backend, cache_path: str | Path, workers: int = 1, stretch: bool = True) -> CacheRun:
    """Make sure every labelled point of ``dataset`` has a cached vector for ``backend``.

    Images are processed in parallel but appended in manifest order.
    """
    import warnings

    from .preprocess import DegenerateChannelWarning

    start = time.perf_counter()
    store = FeatureStore(cache_path, dim=getattr(backend, "dim", FEATURE_DIM))
    pending: dict[str, list] = {}
    for lb in dataset.labels:
        if (lb.image_id, lb.x_px, lb.y_px, backend.backend_id) not in store:
            pending.setdefault(lb.image_id, [])
            if lb not in pending[lb.image_id]:
                pending[lb.image_id].append(lb)
    index = dataset.image_index()
    jobs = [(index[iid], pts) for iid, pts in pending.items()]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateChannelWarning)
        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = pool.map(lambda job: _image_features(backend, job[0], job[1], stretch), jobs)
                n_new = sum(store.append(fv) for fvs in results for fv in fvs)
        else:
            n_new = sum(store.append(fv) for im, pts in jobs for fv in _image_features(backend, im, pts, stretch))

    elapsed = time.perf_counter() - start
    log.info("cached %d new vectors from %d images in %.2fs", n_new, len(jobs), elapsed)
    return CacheRun(store=store, n_new=n_new, n_images_processed=len(jobs), seconds=elapsed)


def feature_matrix(store: FeatureStore, labels, backend_id: str) -> np.ndarray:
    return store.matrix((lb.image_id, lb.x_px, lb.y_px, backend_id) for lb in labels).astype(np.float64)
