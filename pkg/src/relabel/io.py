"""Annotation JSON, binary PGM rasters, run configuration and CSV output."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable

import jsonschema
import numpy as np

from .annotations import AnnotationSet, ImageInfo
from .cloning import BlurStrength
from .errors import AnnotationFormatError, ConfigError, PGMFormatError
from .fusion import DEFAULT_ACCEPT_THR, FusionConfig
from .geometry import DEFAULT_SCALES, BBox, Detection, Flip, ViewTransform, default_views
from .selftrain import CorruptionConfig, SimDetectorConfig, WorldConfig

SCHEMA_VERSION = "1.0"

ANNOTATION_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["images", "annotations"],
    "properties": {
        "schema_version": {"type": "string"},
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "width", "height"],
                "properties": {
                    "id": {"type": "string"},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "file": {"type": ["string", "null"]},
                },
            },
        },
        "annotations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "bbox"],
                "properties": {
                    "image_id": {"type": "string"},
                    "bbox": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                    "score": {"type": "number", "minimum": 0, "maximum": 1},
                    "class_id": {"const": 0},
                },
            },
        },
        "view": {
            "type": "object",
            "required": ["flip", "scale"],
            "properties": {
                "flip": {"enum": [f.value for f in Flip]},
                "scale": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


def _json_path(path: Iterable) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


# -- annotations -------------------------------------------------------------


def annotations_from_dict(doc: Any, source: str = "<dict>", check_bounds: bool = True) -> AnnotationSet:
    try:
        jsonschema.validate(doc, ANNOTATION_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise AnnotationFormatError(f"{source}: {_json_path(exc.absolute_path)}: {exc.message}") from None
    images = [ImageInfo(im["id"], im["width"], im["height"], im.get("file")) for im in doc["images"]]
    index = {im.id: im for im in images}
    if len(index) != len(images):
        raise AnnotationFormatError(f"{source}: duplicate image ids")
    anns: dict[str, list[Detection]] = {im.id: [] for im in images}
    for k, ann in enumerate(doc["annotations"]):
        where = f"{source}: annotations[{k}]"
        image_id = ann["image_id"]
        if image_id not in index:
            raise AnnotationFormatError(f"{where}.image_id: unknown image id {image_id!r}")
        x1, y1, x2, y2 = (float(v) for v in ann["bbox"])
        try:
            box = BBox(x1, y1, x2, y2)
        except ValueError as exc:
            raise AnnotationFormatError(f"{where}.bbox: {exc}") from None
        im = index[image_id]
        if check_bounds and (x1 < 0 or y1 < 0 or x2 > im.width or y2 > im.height):
            raise AnnotationFormatError(f"{where}.bbox: box {box.as_tuple()} leaves image {image_id!r}")
        anns[image_id].append(Detection(box, float(ann.get("score", 1.0)), int(ann.get("class_id", 0))))
    return AnnotationSet(images, anns)


def annotations_to_dict(aset: AnnotationSet) -> dict[str, Any]:
    images = []
    for im in aset.images:
        entry: dict[str, Any] = {"id": im.id, "width": im.width, "height": im.height}
        if im.file is not None:
            entry["file"] = im.file
        images.append(entry)
    anns = [
        {"image_id": im.id, "bbox": list(d.box.as_tuple()), "score": d.score, "class_id": d.class_id}
        for im in aset.images
        for d in aset.get(im.id)
    ]
    return {"schema_version": SCHEMA_VERSION, "images": images, "annotations": anns}


def _load_json(path: str | Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def read_annotations(path: str | Path, check_bounds: bool = True) -> AnnotationSet:
    return annotations_from_dict(_load_json(path), str(path), check_bounds)


def dumps_annotations(aset: AnnotationSet) -> str:
    # json writes floats with repr(), the shortest string that round-trips
    return json.dumps(annotations_to_dict(aset), indent=1) + "\n"


def write_annotations(aset: AnnotationSet, path: str | Path) -> None:
    Path(path).write_text(dumps_annotations(aset), encoding="utf-8")


def read_view_predictions(path: str | Path) -> tuple[ViewTransform, AnnotationSet]:
    """Read a per-view prediction file (boxes in view coordinates)."""
    doc = _load_json(path)
    if not isinstance(doc, dict) or "view" not in doc:
        raise AnnotationFormatError(f"{path}: view: missing top-level 'view' object")
    aset = annotations_from_dict(doc, str(path), check_bounds=False)
    view = ViewTransform(Flip(doc["view"]["flip"]), float(doc["view"]["scale"]))
    return view, aset


def write_view_predictions(view: ViewTransform, aset: AnnotationSet, path: str | Path) -> None:
    doc = annotations_to_dict(aset)
    doc["view"] = {"flip": view.flip.value, "scale": view.scale}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


# -- PGM ---------------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the single whitespace
    byte that terminates the last one.
    """
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise PGMFormatError("truncated PGM header")
        tokens.append(data[start:i])
    if i >= n or not data[i : i + 1].isspace():
        raise PGMFormatError("PGM header must end with a whitespace byte")
    return tokens, i + 1


def decode_pgm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic in (b"P1", b"P2", b"P3", b"P4", b"P6"):
        raise PGMFormatError(f"unsupported variant {magic.decode()}; only binary P5 is supported")
    if magic != b"P5":
        raise PGMFormatError("not a PGM file (missing P5 magic)")
    tokens, offset = _pgm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PGMFormatError("malformed PGM header") from None
    if width < 1 or height < 1:
        raise PGMFormatError("PGM dimensions must be positive")
    if maxval != 255:
        raise PGMFormatError(f"maxval must be 255, got {maxval}")
    pixels = data[offset : offset + width * height]
    if len(pixels) != width * height:
        raise PGMFormatError(f"expected {width * height} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).astype(np.float64)


def to_uint8(raster: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(raster, dtype=np.float64)), 0, 255).astype(np.uint8)


def encode_pgm(raster: np.ndarray) -> bytes:
    pix = to_uint8(raster)
    if pix.ndim != 2:
        raise ValueError("PGM rasters are 2-D")
    h, w = pix.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pix.tobytes()


def read_pgm(path: str | Path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path: str | Path, raster: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(raster))


def read_image(path: str | Path) -> np.ndarray:
    """PGM natively; PNG (converted to grayscale) when Pillow is installed."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError:
            raise PGMFormatError("PNG input needs Pillow (pip install relabel[png])") from None
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64)
    return read_pgm(path)


# -- run configuration -------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    world: WorldConfig = WorldConfig()
    corruption: CorruptionConfig = CorruptionConfig()
    detector: SimDetectorConfig = SimDetectorConfig()
    fusion: FusionConfig = FusionConfig()
    scales: tuple[float, ...] = DEFAULT_SCALES
    blur: str = "weak"
    margin_px: int = 2
    accept_thr: float = DEFAULT_ACCEPT_THR
    threshold: float = 0.9
    max_epochs: int = 12
    batch_size: int = 8
    start_epoch: int | None = None
    frame_every: int = 3
    frame_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.max_epochs < 3:
            raise ConfigError("max_epochs must be >= 3")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be even")
        if self.blur not in ("weak", "strong"):
            raise ConfigError("blur must be 'weak' or 'strong'")
        if self.margin_px < 0 or self.frame_every < 1:
            raise ConfigError("margin_px must be >= 0 and frame_every >= 1")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigError("scales must be a non-empty list of positive numbers")
        if self.accept_thr < 0:
            raise ConfigError("accept_thr must be non-negative")

    @property
    def views(self) -> list[ViewTransform]:
        return default_views(self.scales)

    @property
    def blur_strength(self) -> BlurStrength:
        return BlurStrength.from_name(self.blur)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["scales"] = list(self.scales)
        d["frame_ids"] = list(self.frame_ids)
        return d


_NESTED = {
    "world": WorldConfig,
    "corruption": CorruptionConfig,
    "detector": SimDetectorConfig,
    "fusion": FusionConfig,
}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected an object")
    data = dict(data)
    for key in ("scales", "frame_ids"):
        if key in data:
            if not isinstance(data[key], list):
                raise ConfigError(f"{key}: expected a list")
            data[key] = tuple(data[key])
    fusion = dict(data.get("fusion") or {})
    if "n_views" not in fusion:
        # the fusion support count follows the number of views unless given
        fusion["n_views"] = 4 * len(data.get("scales", DEFAULT_SCALES))
    data["fusion"] = fusion
    for key, cls in _NESTED.items():
        if key in data:
            data[key] = _build(cls, data[key], key)
    return _build(RunConfig, data, "config")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(data)


def with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    return cfg if seed is None else replace(cfg, seed=seed)


# -- CSV ---------------------------------------------------------------------


def format_float(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_csv(path: str | Path, header: Iterable[str], rows: Iterable[Iterable[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_float(v) for v in row])


def read_csv_rows(path: str | Path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh)]
