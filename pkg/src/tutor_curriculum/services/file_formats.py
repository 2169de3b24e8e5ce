"""
On-disk formats

- ``.pts`` annotations: first line ``W H C``, then one ``x y`` pair per line.
- Images: binary PPM (P6) for 3 channels, PGM (P5) for 1, 8-bit; values are
  stored as round(v·255), so images quantized to k/255 round-trip exactly.
- Density exports: 16-bit PGM normalized by the map's max, with a header
  comment recording the scale factor and the true max; and ``DMAP1`` raw
  binary (little-endian u32 h, u32 w, f64 s, f64 sigma, h·w f64 values).
- Checkpoints: ``TGCKPT1`` magic, a JSON metadata block (spec, seed, scale
  factor, sigma, mode) and one shape-prefixed little-endian f64 blob per
  parameter.
- Dataset manifest: one scene id per line.

Every writer goes through the atomic file helpers.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from tutor_curriculum.core.files import atomic_write_bytes, atomic_write_text
from tutor_curriculum.core.tensor import DTYPE, Tensor
from tutor_curriculum.exceptions import AnnotationParseError, CheckpointError
from tutor_curriculum.models.network_models import NetworkParams, NetworkSpec
from tutor_curriculum.models.scene_models import AnnotatedScene, DensityMap, Point
from tutor_curriculum.services.networks import parameter_shapes


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DMAP_MAGIC = b"DMAP1"
CHECKPOINT_MAGIC = b"TGCKPT1"
MANIFEST_NAME = "manifest.txt"


# ----------------------------------------------------------------------
# Annotations

def format_points(width: int, height: int, channels: int, points: List[Point]) -> str:
    lines = [f"{width} {height} {channels}"]
    lines.extend(f"{float(x)!r} {float(y)!r}" for x, y in points)
    return "\n".join(lines) + "\n"


def parse_points(text: str, path: str = "<memory>") -> Tuple[int, int, int, List[Point]]:
    """
    Parse an annotation file

    Raises:
        AnnotationParseError: malformed header or point line, or a point
            outside [0, W) × [0, H); the error names the line number
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise AnnotationParseError(path, "missing 'W H C' header", 1)
    header = lines[0].split()
    try:
        width, height, channels = (int(token) for token in header)
    except ValueError:
        raise AnnotationParseError(path, f"malformed header '{lines[0]}', expected 'W H C'", 1) from None
    if width <= 0 or height <= 0 or channels not in (1, 3):
        raise AnnotationParseError(path, f"invalid header values '{lines[0]}'", 1)

    points: List[Point] = []
    for line_number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise AnnotationParseError(path, f"expected 'x y', got '{line}'", line_number)
        try:
            x, y = float(tokens[0]), float(tokens[1])
        except ValueError:
            raise AnnotationParseError(path, f"non-numeric point '{line}'", line_number) from None
        if not (0.0 <= x < width and 0.0 <= y < height):
            raise AnnotationParseError(
                path, f"point ({x}, {y}) outside [0, {width}) x [0, {height})", line_number
            )
        points.append((x, y))
    return width, height, channels, points


# ----------------------------------------------------------------------
# Netpbm images

def encode_netpbm(image: np.ndarray) -> bytes:
    """Encode a C×H×W array in [0, 1] as P6 (C=3) or P5 (C=1), 8-bit"""
    channels, height, width = image.shape
    if channels not in (1, 3):
        raise ValueError(f"netpbm images need 1 or 3 channels, got {channels}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    magic = b"P6" if channels == 3 else b"P5"
    pixels = np.rint(image * 255.0).astype(np.uint8).transpose(1, 2, 0)
    return magic + f"\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def _read_header_tokens(payload: bytes, count: int, path: str) -> Tuple[List[bytes], List[str], int]:
    """Read ``count`` whitespace-separated header tokens, collecting comments"""
    tokens: List[bytes] = []
    comments: List[str] = []
    position = 0
    while len(tokens) < count:
        while position < len(payload) and payload[position:position + 1].isspace():
            position += 1
        if position >= len(payload):
            raise AnnotationParseError(path, "truncated netpbm header")
        if payload[position:position + 1] == b"#":
            end = payload.find(b"\n", position)
            end = len(payload) if end < 0 else end
            comments.append(payload[position + 1:end].decode("ascii", "replace").strip())
            position = end + 1
            continue
        start = position
        while position < len(payload) and not payload[position:position + 1].isspace():
            position += 1
        tokens.append(payload[start:position])
    # Exactly one whitespace byte separates the header from the raster
    return tokens, comments, position + 1


def decode_netpbm(payload: bytes, path: str = "<memory>") -> Tuple[np.ndarray, int, List[str]]:
    """
    Decode a binary P5/P6 image

    Returns:
        (C×H×W float array in [0, 1], maxval, header comments)
    """
    tokens, comments, offset = _read_header_tokens(payload, 4, path)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise AnnotationParseError(path, f"unsupported netpbm magic {magic!r}")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise AnnotationParseError(path, "malformed netpbm dimensions") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise AnnotationParseError(path, f"invalid netpbm header {width}x{height} maxval {maxval}")

    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    expected = width * height * channels * dtype.itemsize
    raster = payload[offset:offset + expected]
    if len(raster) != expected:
        raise AnnotationParseError(path, f"truncated raster: expected {expected} bytes, got {len(raster)}")
    values = np.frombuffer(raster, dtype=dtype).reshape(height, width, channels).transpose(2, 0, 1)
    return values.astype(DTYPE) / maxval, maxval, comments


def read_ppm(path: PathLike) -> np.ndarray:
    image, _, _ = decode_netpbm(Path(path).read_bytes(), str(path))
    return image


def read_pgm(path: PathLike) -> Tuple[np.ndarray, List[str]]:
    """Grayscale image (H×W, normalized by maxval) and its header comments"""
    image, _, comments = decode_netpbm(Path(path).read_bytes(), str(path))
    if image.shape[0] != 1:
        raise AnnotationParseError(str(path), "expected a single-channel PGM")
    return image[0], comments


# ----------------------------------------------------------------------
# Scenes

def write_scene(directory: PathLike, scene: AnnotatedScene) -> Tuple[Path, Path]:
    """Write ``<id>.ppm`` and ``<id>.pts``"""
    scene.validate()
    root = Path(directory)
    image_path = atomic_write_bytes(root / f"{scene.scene_id}.ppm", encode_netpbm(scene.image.data[0]))
    points_path = atomic_write_text(
        root / f"{scene.scene_id}.pts",
        format_points(scene.width, scene.height, scene.channels, scene.points),
    )
    return image_path, points_path


def read_scene(directory: PathLike, scene_id: str) -> AnnotatedScene:
    """
    Read a scene pair

    Raises:
        FileNotFoundError: either file is missing
        AnnotationParseError: malformed files or a header/image mismatch
    """
    root = Path(directory)
    points_path = root / f"{scene_id}.pts"
    image_path = root / f"{scene_id}.ppm"
    width, height, channels, points = parse_points(points_path.read_text(encoding="utf-8"), str(points_path))
    image = read_ppm(image_path)
    if image.shape != (channels, height, width):
        raise AnnotationParseError(
            str(points_path),
            f"header {width}x{height}x{channels} does not match image {image.shape[2]}x{image.shape[1]}x{image.shape[0]}",
            1,
        )
    return AnnotatedScene(image=Tensor(image[None]), points=points, scene_id=scene_id)


def write_manifest(directory: PathLike, scene_ids: List[str]) -> Path:
    text = "".join(f"{scene_id}\n" for scene_id in scene_ids)
    return atomic_write_text(Path(directory) / MANIFEST_NAME, text)


def read_manifest(directory: PathLike) -> List[str]:
    path = Path(directory) / MANIFEST_NAME
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


# ----------------------------------------------------------------------
# Density exports

def encode_density_pgm(density_map: DensityMap) -> bytes:
    """16-bit PGM normalized by the map's max; the header records s and the true max"""
    grid = density_map.grid.data[0, 0]
    peak = float(grid.max()) if grid.size else 0.0
    normalized = grid / peak if peak > 0 else np.zeros_like(grid)
    raster = np.rint(normalized * 65535.0).astype(">u2")
    height, width = grid.shape
    header = (
        f"P5\n# scale_factor={density_map.scale_factor!r} max={peak!r}\n"
        f"{width} {height}\n65535\n"
    )
    return header.encode("ascii") + raster.tobytes()


def write_density_pgm(path: PathLike, density_map: DensityMap) -> Path:
    return atomic_write_bytes(path, encode_density_pgm(density_map))


def encode_dmap(density_map: DensityMap) -> bytes:
    grid = density_map.grid.data[0, 0]
    height, width = grid.shape
    header = DMAP_MAGIC + struct.pack("<IIdd", height, width, density_map.scale_factor, density_map.sigma)
    return header + grid.astype("<f8").tobytes()


def write_dmap(path: PathLike, density_map: DensityMap) -> Path:
    return atomic_write_bytes(path, encode_dmap(density_map))


def decode_dmap(payload: bytes, path: str = "<memory>", downsample: int = 8) -> DensityMap:
    """
    Inverse of ``encode_dmap``; the format does not store the downsample rate

    Raises:
        AnnotationParseError: bad magic or truncated payload
    """
    prefix = len(DMAP_MAGIC)
    header_size = prefix + struct.calcsize("<IIdd")
    if payload[:prefix] != DMAP_MAGIC:
        raise AnnotationParseError(path, "not a DMAP1 file")
    if len(payload) < header_size:
        raise AnnotationParseError(path, "truncated DMAP1 header")
    height, width, scale_factor, sigma = struct.unpack("<IIdd", payload[prefix:header_size])
    body = payload[header_size:]
    if len(body) != height * width * 8:
        raise AnnotationParseError(path, f"expected {height * width} values, got {len(body) // 8}")
    grid = np.frombuffer(body, dtype="<f8").astype(DTYPE).reshape(1, 1, height, width)
    return DensityMap(grid=Tensor(grid), scale_factor=scale_factor, sigma=sigma, downsample=downsample)


def read_dmap(path: PathLike, downsample: int = 8) -> DensityMap:
    return decode_dmap(Path(path).read_bytes(), str(path), downsample)


# ----------------------------------------------------------------------
# Checkpoints

@dataclass
class Checkpoint:
    """A network spec, its parameters and run metadata"""
    spec: NetworkSpec
    params: NetworkParams
    seed: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def scale_factor(self) -> float:
        return float(self.metadata.get("scale_factor", 1.0))


def encode_checkpoint(
    spec: NetworkSpec,
    params: NetworkParams,
    seed: int = 0,
    metadata: Optional[Dict[str, Any]] = None,
) -> bytes:
    header = {
        "name": spec.name,
        "width_multiplier": str(spec.width_multiplier),
        "seed": seed,
        "spec": spec.model_dump(mode="json"),
        "metadata": metadata or {},
    }
    # sort_keys keeps identical runs byte-identical
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(blob)), blob, struct.pack("<I", len(params))]
    for key, tensor in params.items():
        name = key.encode("utf-8")
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<B", tensor.ndim) + struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(tensor.data.astype("<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(
    path: PathLike,
    spec: NetworkSpec,
    params: NetworkParams,
    seed: int = 0,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    target = atomic_write_bytes(path, encode_checkpoint(spec, params, seed, metadata))
    logger.info(f"Saved {spec.name} checkpoint to {target}")
    return target


class _Reader:
    def __init__(self, payload: bytes, path: str):
        self.payload = payload
        self.path = path
        self.position = 0

    def take(self, size: int) -> bytes:
        chunk = self.payload[self.position:self.position + size]
        if len(chunk) != size:
            raise CheckpointError(f"Checkpoint {self.path} is truncated at byte {self.position}")
        self.position += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(payload: bytes, path: str = "<memory>") -> Checkpoint:
    """
    Inverse of ``encode_checkpoint``

    Raises:
        CheckpointError: bad magic, truncation, corrupt metadata or parameter
            shapes that disagree with the stored spec
    """
    reader = _Reader(payload, path)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a TGCKPT1 checkpoint")
    (blob_size,) = reader.unpack("<I")
    try:
        header = json.loads(reader.take(blob_size).decode("utf-8"))
        spec = NetworkSpec.model_validate(header["spec"])
    except (ValueError, KeyError) as e:
        raise CheckpointError(f"Checkpoint {path} has corrupt metadata: {e}") from e

    (count,) = reader.unpack("<I")
    tensors: Dict[str, Tensor] = {}
    for _ in range(count):
        (name_size,) = reader.unpack("<H")
        key = reader.take(name_size).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(reader.take(size * 8), dtype="<f8").astype(DTYPE).reshape(shape)
        tensors[key] = Tensor(values, requires_grad=True)
    if reader.position != len(payload):
        raise CheckpointError(f"Checkpoint {path} has {len(payload) - reader.position} trailing bytes")

    expected = parameter_shapes(spec)
    actual = {key: tensor.shape for key, tensor in tensors.items()}
    if expected != actual:
        raise CheckpointError(f"Checkpoint {path} parameters do not match spec {spec.name}")
    return Checkpoint(spec=spec, params=NetworkParams(tensors), seed=int(header.get("seed", 0)),
                      metadata=dict(header.get("metadata", {})))


def load_checkpoint(path: PathLike) -> Checkpoint:
    target = Path(path)
    if not target.exists():
        raise CheckpointError(f"Checkpoint {target} does not exist")
    return decode_checkpoint(target.read_bytes(), str(target))
