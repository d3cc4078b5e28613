"""Per-image detection collections (weak labels, pseudo labels, predictions)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from .errors import UnknownImageError
from .geometry import Detection


@dataclass(frozen=True)
class ImageInfo:
    id: str
    width: int
    height: int
    file: str | None = None

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image {self.id!r} must have positive size")


@dataclass
class AnnotationSet:
    """Images plus a detection list per image.

    Images without an entry in ``annotations`` have no detections. Boxes
    are not bounds-checked here; file parsing and the producers in this
    package clip them.
    """

    images: list[ImageInfo]
    annotations: dict[str, list[Detection]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._index = {img.id: img for img in self.images}
        if len(self._index) != len(self.images):
            raise ValueError("duplicate image ids")
        for image_id in self.annotations:
            if image_id not in self._index:
                raise UnknownImageError(image_id)

    @property
    def image_ids(self) -> list[str]:
        return [img.id for img in self.images]

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def __iter__(self) -> Iterator[ImageInfo]:
        return iter(self.images)

    def __len__(self) -> int:
        return len(self.images)

    def image(self, image_id: str) -> ImageInfo:
        try:
            return self._index[image_id]
        except KeyError:
            raise UnknownImageError(image_id) from None

    def get(self, image_id: str) -> list[Detection]:
        if image_id not in self._index:
            raise UnknownImageError(image_id)
        return list(self.annotations.get(image_id, ()))

    def num_boxes(self) -> int:
        return sum(len(v) for v in self.annotations.values())

    def replaced(self, updates: Mapping[str, Sequence[Detection]]) -> "AnnotationSet":
        """Copy with the listed images' detections fully replaced."""
        new = {k: list(v) for k, v in self.annotations.items()}
        for image_id, dets in updates.items():
            if image_id not in self._index:
                raise UnknownImageError(image_id)
            new[image_id] = list(dets)
        return AnnotationSet(list(self.images), new)

    def empty_like(self) -> "AnnotationSet":
        return AnnotationSet(list(self.images), {})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        if self.images != other.images:
            return False
        return all(self.get(i) == other.get(i) for i in self.image_ids)
