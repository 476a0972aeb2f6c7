"""Annotation loading, validation, and crop geometry.

Two annotation families feed benchmark construction: object instances carrying
positive/negative attribute labels, and panoptic category pixel fractions. Both
are stored as JSONL and indexed here.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .errors import GeometryError, IntegrityError, SchemaError

logger = logging.getLogger(__name__)

DEFAULT_STRIP_SUFFIXES = ("-stuff", "-other", "-merged")
PRESENCE_THRESHOLD = 0.01

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class ImageRecord:
    """One image with its pixel dimensions."""

    id: str
    width: int
    height: int


@dataclass(frozen=True)
class ObjectInstance:
    """A boxed object with attribute labels.

    positive_attributes are annotated present, negative_attributes annotated
    absent; the two sets are disjoint.
    """

    id: str
    image_id: str
    category: str
    box: Box
    positive_attributes: frozenset[str]
    negative_attributes: frozenset[str]


@dataclass(frozen=True)
class PanopticRecord:
    """Per-image map from category to pixel fraction."""

    image_id: str
    fractions: Mapping[str, float]


@dataclass(frozen=True)
class AttributeTaxonomy:
    """Assignment of every attribute to exactly one type."""

    type_of: Mapping[str, str]

    @classmethod
    def from_mapping(cls, groups: Mapping[str, Sequence[str]]) -> "AttributeTaxonomy":
        type_of: dict[str, str] = {}
        for type_name, attrs in groups.items():
            for attr in attrs:
                if attr in type_of:
                    raise IntegrityError(
                        f"attribute {attr!r} assigned to both "
                        f"{type_of[attr]!r} and {type_name!r}"
                    )
                type_of[attr] = type_name
        return cls(type_of=type_of)

    @property
    def types(self) -> list[str]:
        return sorted(set(self.type_of.values()))

    def attributes_of(self, type_name: str) -> list[str]:
        return sorted(a for a, t in self.type_of.items() if t == type_name)

    def groups(self) -> dict[str, list[str]]:
        return {t: self.attributes_of(t) for t in self.types}


@dataclass(frozen=True)
class CropSpec:
    """A dilated crop window plus the zero padding that squares it.

    All values are pixels in the source image frame; side() gives the final
    square edge after padding.
    """

    x: float
    y: float
    w: float
    h: float
    pad_left: float
    pad_right: float
    pad_top: float
    pad_bottom: float

    def side(self) -> float:
        return self.w + self.pad_left + self.pad_right

    def to_json(self) -> dict[str, float]:
        return {
            "x": self.x,
            "y": self.y,
            "w": self.w,
            "h": self.h,
            "pad_left": self.pad_left,
            "pad_right": self.pad_right,
            "pad_top": self.pad_top,
            "pad_bottom": self.pad_bottom,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, float]) -> "CropSpec":
        try:
            return cls(**{k: float(obj[k]) for k in (
                "x", "y", "w", "h",
                "pad_left", "pad_right", "pad_top", "pad_bottom",
            )})
        except KeyError as exc:
            raise SchemaError(f"crop missing field {exc.args[0]!r}") from exc


def normalize_category(name: str, suffixes: Sequence[str] = DEFAULT_STRIP_SUFFIXES) -> str:
    """Strip dataset bookkeeping suffixes, repeatedly, e.g. sky-other-merged -> sky."""
    changed = True
    while changed:
        changed = False
        for suffix in suffixes:
            if name.endswith(suffix) and len(name) > len(suffix):
                name = name[: -len(suffix)]
                changed = True
    return name


def categories_present(rec: PanopticRecord, threshold: float = PRESENCE_THRESHOLD) -> set[str]:
    """Categories covering strictly more than `threshold` of the image."""
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must be in [0, 1), got {threshold}")
    return {cat for cat, frac in rec.fractions.items() if frac > threshold}


def dilate_and_pad_box(
    box: Box,
    image_size: tuple[float, float],
    dilation: float = 0.7,
) -> CropSpec:
    """Grow a box about its center, clamp it into the image, square it with padding.

    Width and height each grow by the dilation factor. If the grown window
    still fits inside the image it is shifted (not shrunk) to fit; a window
    larger than the image is capped at the image extent. The shorter dimension
    is then zero-padded symmetrically to square.
    """
    x, y, w, h = (float(v) for v in box)
    width, height = (float(v) for v in image_size)
    if w <= 0 or h <= 0:
        raise GeometryError(f"degenerate box {box}")
    if width <= 0 or height <= 0:
        raise GeometryError(f"degenerate image size {image_size}")
    if dilation < 0:
        raise GeometryError(f"dilation must be nonnegative, got {dilation}")

    new_w = min(w * (1.0 + dilation), width)
    new_h = min(h * (1.0 + dilation), height)
    new_x = min(max(x + w / 2.0 - new_w / 2.0, 0.0), width - new_w)
    new_y = min(max(y + h / 2.0 - new_h / 2.0, 0.0), height - new_h)

    side = max(new_w, new_h)
    pad_w = side - new_w
    pad_h = side - new_h
    return CropSpec(
        x=new_x, y=new_y, w=new_w, h=new_h,
        pad_left=pad_w / 2.0, pad_right=pad_w / 2.0,
        pad_top=pad_h / 2.0, pad_bottom=pad_h / 2.0,
    )


@dataclass(frozen=True)
class StorePaths:
    """File locations for one on-disk store."""

    images: Path
    instances: Path
    panoptic: Path
    taxonomy: Path

    @classmethod
    def in_dir(cls, directory: str | Path) -> "StorePaths":
        d = Path(directory)
        return cls(
            images=d / "images.jsonl",
            instances=d / "instances.jsonl",
            panoptic=d / "panoptic.jsonl",
            taxonomy=d / "taxonomy.json",
        )


@dataclass(frozen=True)
class LoadConfig:
    strip_suffixes: tuple[str, ...] = DEFAULT_STRIP_SUFFIXES
    require_known_attributes: bool = True


@dataclass
class AnnotationStore:
    """Validated, indexed view over the four annotation collections."""

    images: list[ImageRecord]
    instances: list[ObjectInstance]
    panoptic: list[PanopticRecord]
    taxonomy: AttributeTaxonomy

    images_by_id: dict[str, ImageRecord] = field(
        init=False, repr=False, compare=False)
    instances_by_id: dict[str, ObjectInstance] = field(
        init=False, repr=False, compare=False)
    instances_by_image: dict[str, list[ObjectInstance]] = field(
        init=False, repr=False, compare=False)
    instances_by_category: dict[str, list[ObjectInstance]] = field(
        init=False, repr=False, compare=False)
    panoptic_by_image: dict[str, PanopticRecord] = field(
        init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._validate()
        self._index()

    def _validate(self) -> None:
        seen_images: set[str] = set()
        for rec in self.images:
            if rec.id in seen_images:
                raise IntegrityError(f"duplicate image id {rec.id!r}")
            seen_images.add(rec.id)

        seen_instances: set[str] = set()
        for inst in self.instances:
            if inst.id in seen_instances:
                raise IntegrityError(f"duplicate instance id {inst.id!r}")
            seen_instances.add(inst.id)
            if inst.image_id not in seen_images:
                raise IntegrityError(
                    f"instance {inst.id!r} references unknown image {inst.image_id!r}")
            overlap = inst.positive_attributes & inst.negative_attributes
            if overlap:
                raise IntegrityError(
                    f"instance {inst.id!r} lists {sorted(overlap)} as both "
                    "positive and negative")

        seen_panoptic: set[str] = set()
        for rec in self.panoptic:
            if rec.image_id in seen_panoptic:
                raise IntegrityError(
                    f"duplicate panoptic record for image {rec.image_id!r}")
            seen_panoptic.add(rec.image_id)
            if rec.image_id not in seen_images:
                raise IntegrityError(
                    f"panoptic record references unknown image {rec.image_id!r}")

    def _index(self) -> None:
        self.images_by_id = {rec.id: rec for rec in self.images}
        self.instances_by_id = {inst.id: inst for inst in self.instances}
        self.instances_by_image = {}
        self.instances_by_category = {}
        for inst in self.instances:
            self.instances_by_image.setdefault(inst.image_id, []).append(inst)
            self.instances_by_category.setdefault(inst.category, []).append(inst)
        self.panoptic_by_image = {rec.image_id: rec for rec in self.panoptic}

    def check_attribute_keys(self) -> None:
        """Reject instances labelled with attributes outside the taxonomy."""
        known = self.taxonomy.type_of
        for inst in self.instances:
            unknown = (inst.positive_attributes | inst.negative_attributes) - known.keys()
            if unknown:
                raise IntegrityError(
                    f"instance {inst.id!r} uses attributes not in the "
                    f"taxonomy: {sorted(unknown)}")

    def image_size(self, image_id: str) -> tuple[int, int]:
        rec = self.images_by_id[image_id]
        return rec.width, rec.height

    def scene_categories(
        self, image_id: str, threshold: float = PRESENCE_THRESHOLD
    ) -> set[str]:
        return categories_present(self.panoptic_by_image[image_id], threshold)


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", str(path), lineno) from exc
            if not isinstance(obj, dict):
                raise SchemaError("record is not a JSON object", str(path), lineno)
            yield lineno, obj


def _get_str(obj: dict, key: str, path: str, line: int) -> str:
    val = obj.get(key)
    if not isinstance(val, str) or not val:
        raise SchemaError(f"field {key!r} must be a nonempty string", path, line)
    return val


def _get_dim(obj: dict, key: str, path: str, line: int) -> int:
    val = obj.get(key)
    if isinstance(val, bool) or not isinstance(val, int) or val <= 0:
        raise SchemaError(f"field {key!r} must be a positive integer", path, line)
    return val


def _get_number(val: object, what: str, path: str, line: int) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SchemaError(f"{what} must be a number", path, line)
    out = float(val)
    if not math.isfinite(out):
        raise SchemaError(f"{what} must be finite", path, line)
    return out


def _get_attr_list(obj: dict, key: str, path: str, line: int) -> frozenset[str]:
    val = obj.get(key, [])
    if not isinstance(val, list) or any(not isinstance(a, str) for a in val):
        raise SchemaError(f"field {key!r} must be a list of strings", path, line)
    return frozenset(val)


def _clamp_box(box: Box, image: ImageRecord, inst_id: str) -> Box:
    x, y, w, h = box
    x0 = min(max(x, 0.0), float(image.width))
    y0 = min(max(y, 0.0), float(image.height))
    x1 = min(max(x + w, 0.0), float(image.width))
    y1 = min(max(y + h, 0.0), float(image.height))
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise IntegrityError(
            f"instance {inst_id!r} box {box} lies outside image {image.id!r}")
    return (x0, y0, x1 - x0, y1 - y0)


def _load_images(path: Path) -> list[ImageRecord]:
    out = []
    for line, obj in _iter_jsonl(path):
        out.append(ImageRecord(
            id=_get_str(obj, "id", str(path), line),
            width=_get_dim(obj, "width", str(path), line),
            height=_get_dim(obj, "height", str(path), line),
        ))
    return out


def _load_instances(
    path: Path, images: dict[str, ImageRecord], suffixes: Sequence[str]
) -> list[ObjectInstance]:
    out = []
    for line, obj in _iter_jsonl(path):
        inst_id = _get_str(obj, "id", str(path), line)
        image_id = _get_str(obj, "image_id", str(path), line)
        raw_box = obj.get("box")
        if not isinstance(raw_box, list) or len(raw_box) != 4:
            raise SchemaError("field 'box' must be [x, y, w, h]", str(path), line)
        box = tuple(_get_number(v, "box entry", str(path), line) for v in raw_box)
        if box[2] <= 0 or box[3] <= 0:
            raise SchemaError(f"box {raw_box} has nonpositive extent", str(path), line)
        image = images.get(image_id)
        if image is None:
            raise IntegrityError(
                f"instance {inst_id!r} references unknown image {image_id!r}")
        out.append(ObjectInstance(
            id=inst_id,
            image_id=image_id,
            category=normalize_category(_get_str(obj, "category", str(path), line), suffixes),
            box=_clamp_box(box, image, inst_id),  # type: ignore[arg-type]
            positive_attributes=_get_attr_list(obj, "pos_attrs", str(path), line),
            negative_attributes=_get_attr_list(obj, "neg_attrs", str(path), line),
        ))
    return out


def _load_panoptic(path: Path, suffixes: Sequence[str]) -> list[PanopticRecord]:
    out = []
    for line, obj in _iter_jsonl(path):
        image_id = _get_str(obj, "image_id", str(path), line)
        raw = obj.get("fractions")
        if not isinstance(raw, dict):
            raise SchemaError("field 'fractions' must be an object", str(path), line)
        fractions: dict[str, float] = {}
        for cat, val in raw.items():
            frac = _get_number(val, f"fraction for {cat!r}", str(path), line)
            if not 0.0 <= frac <= 1.0:
                raise SchemaError(
                    f"fraction for {cat!r} is {frac}, outside [0, 1]", str(path), line)
            key = normalize_category(cat, suffixes)
            fractions[key] = fractions.get(key, 0.0) + frac
        if sum(fractions.values()) > 1.0 + 1e-6:
            raise SchemaError("fractions sum exceeds 1", str(path), line)
        out.append(PanopticRecord(image_id=image_id, fractions=fractions))
    return out


def _load_taxonomy(path: Path) -> AttributeTaxonomy:
    with open(path, encoding="utf-8") as fh:
        text = fh.read().strip()
    if not text:
        return AttributeTaxonomy(type_of={})
    try:
        groups = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg})", str(path)) from exc
    if not isinstance(groups, dict):
        raise SchemaError("taxonomy must map type -> [attributes]", str(path))
    for type_name, attrs in groups.items():
        if not isinstance(attrs, list) or any(not isinstance(a, str) for a in attrs):
            raise SchemaError(
                f"type {type_name!r} must map to a list of strings", str(path))
    return AttributeTaxonomy.from_mapping(groups)


def load_store(paths: StorePaths, config: LoadConfig = LoadConfig()) -> AnnotationStore:
    """Load, normalize, and cross-validate the four annotation files."""
    images = _load_images(paths.images)
    image_index = {}
    for rec in images:
        if rec.id in image_index:
            raise IntegrityError(f"duplicate image id {rec.id!r}")
        image_index[rec.id] = rec
    instances = _load_instances(paths.instances, image_index, config.strip_suffixes)
    panoptic = _load_panoptic(paths.panoptic, config.strip_suffixes)
    taxonomy = _load_taxonomy(paths.taxonomy)
    store = AnnotationStore(
        images=images, instances=instances, panoptic=panoptic, taxonomy=taxonomy)
    if config.require_known_attributes:
        store.check_attribute_keys()
    logger.info(
        "loaded store: %d images, %d instances, %d panoptic records, "
        "%d attributes in %d types",
        len(images), len(instances), len(panoptic),
        len(taxonomy.type_of), len(taxonomy.types))
    return store


def save_store(store: AnnotationStore, paths: StorePaths) -> None:
    """Write the store back out in its JSONL formats, deterministically ordered."""
    with open(paths.images, "w", encoding="utf-8") as fh:
        for rec in store.images:
            fh.write(json.dumps(
                {"id": rec.id, "width": rec.width, "height": rec.height}) + "\n")
    with open(paths.instances, "w", encoding="utf-8") as fh:
        for inst in store.instances:
            fh.write(json.dumps({
                "id": inst.id,
                "image_id": inst.image_id,
                "box": list(inst.box),
                "category": inst.category,
                "pos_attrs": sorted(inst.positive_attributes),
                "neg_attrs": sorted(inst.negative_attributes),
            }) + "\n")
    with open(paths.panoptic, "w", encoding="utf-8") as fh:
        for rec in store.panoptic:
            fh.write(json.dumps({
                "image_id": rec.image_id,
                "fractions": {c: rec.fractions[c] for c in sorted(rec.fractions)},
            }) + "\n")
    with open(paths.taxonomy, "w", encoding="utf-8") as fh:
        json.dump(store.taxonomy.groups(), fh, indent=2, sort_keys=True)
        fh.write("\n")
