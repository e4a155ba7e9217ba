"""Dataset manifests and the package's small file formats.

A manifest directory holds ``images/`` (P5/P6 pixmaps), ``annotations.csv``
(one row per object: image_filename,class_id,xmin,ymin,xmax,ymax),
``classes.txt`` (one class name per line, line index = class id) and an
optional ``provenance.txt`` recording how the directory was produced.
Detections serialize as image_filename,class_id,score,xmin,ymin,xmax,ymax.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .pnm import read_pnm, write_pnm

ANNOTATION_HEADER = "image_filename,class_id,xmin,ymin,xmax,ymax"
DETECTION_HEADER = "image_filename,class_id,score,xmin,ymin,xmax,ymax"


class DataError(ValueError):
    """Raised for malformed manifest files; carries a line number when known."""


@dataclass(frozen=True)
class BoxAnnotation:
    """A labeled axis-aligned box; xmin/ymin inclusive, xmax/ymax exclusive."""

    class_id: int
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise DataError(f"degenerate box {self}")
        if self.class_id < 0:
            raise DataError(f"negative class id {self.class_id}")

    def as_array(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin, self.xmax, self.ymax], dtype=np.float32)


@dataclass
class Manifest:
    """Ordered image names with their annotations and the class table."""

    root: Path
    image_names: list
    annotations: dict
    class_names: list

    def image_path(self, name: str) -> Path:
        return self.root / "images" / name

    def load_image(self, name: str) -> np.ndarray:
        return read_pnm(self.image_path(name))

    def boxes_for(self, name: str) -> list:
        return self.annotations.get(name, [])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def write_annotations_csv(path: Path, rows) -> None:
    """``rows``: iterable of (image_name, BoxAnnotation)."""
    lines = [ANNOTATION_HEADER]
    for name, ann in rows:
        lines.append(
            f"{name},{ann.class_id},{_fmt(ann.xmin)},{_fmt(ann.ymin)},"
            f"{_fmt(ann.xmax)},{_fmt(ann.ymax)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_annotations_csv(path: Path):
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and line == ANNOTATION_HEADER):
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            try:
                ann = BoxAnnotation(
                    class_id=int(parts[1]),
                    xmin=float(parts[2]),
                    ymin=float(parts[3]),
                    xmax=float(parts[4]),
                    ymax=float(parts[5]),
                )
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            rows.append((parts[0], ann))
    return rows


def write_detections_csv(path: Path, rows) -> None:
    """``rows``: iterable of (image_name, class_id, score, xmin, ymin, xmax, ymax)."""
    lines = [DETECTION_HEADER]
    for name, cls, score, x1, y1, x2, y2 in rows:
        lines.append(
            f"{name},{int(cls)},{_fmt(score)},{_fmt(x1)},{_fmt(y1)},{_fmt(x2)},{_fmt(y2)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_detections_csv(path: Path):
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and line == DETECTION_HEADER):
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise DataError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            try:
                rows.append(
                    (
                        parts[0],
                        int(parts[1]),
                        float(parts[2]),
                        float(parts[3]),
                        float(parts[4]),
                        float(parts[5]),
                        float(parts[6]),
                    )
                )
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return rows


def write_manifest(root: Path, images: dict, annotation_rows, class_names, provenance=None) -> Manifest:
    """Write a complete manifest directory.

    ``images``: ordered name -> uint8 array. ``annotation_rows``: iterable
    of (image_name, BoxAnnotation) referencing those names.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for name, arr in images.items():
        write_pnm(root / "images" / name, arr)
    rows = list(annotation_rows)
    write_annotations_csv(root / "annotations.csv", rows)
    (root / "classes.txt").write_text("\n".join(class_names) + "\n", encoding="ascii")
    if provenance:
        write_provenance(root, provenance)
    annotations = {}
    for name, ann in rows:
        annotations.setdefault(name, []).append(ann)
    return Manifest(root, list(images), annotations, list(class_names))


def load_manifest(root: Path) -> Manifest:
    root = Path(root)
    images_dir = root / "images"
    if not images_dir.is_dir():
        raise DataError(f"{root}: missing images/ directory")
    names = sorted(p.name for p in images_dir.iterdir() if p.suffix in (".pgm", ".ppm"))
    classes_path = root / "classes.txt"
    if not classes_path.is_file():
        raise DataError(f"{root}: missing classes.txt")
    class_names = [ln for ln in classes_path.read_text(encoding="ascii").splitlines() if ln]
    annotations = {}
    for name, ann in read_annotations_csv(root / "annotations.csv"):
        if name not in set(names):
            raise DataError(f"annotation references missing image {name!r}")
        if ann.class_id >= len(class_names):
            raise DataError(f"class id {ann.class_id} outside class table for {name!r}")
        annotations.setdefault(name, []).append(ann)
    return Manifest(root, names, annotations, class_names)


def write_provenance(root: Path, entries: dict) -> None:
    """Record seed/config-hash/tool lines; deliberately no timestamps so
    identical runs produce identical bytes."""
    lines = [f"{k}={v}" for k, v in entries.items()]
    (Path(root) / "provenance.txt").write_text("\n".join(lines) + "\n", encoding="ascii")


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def shift_annotation(ann: BoxAnnotation, dx: float, dy: float) -> BoxAnnotation:
    return replace(ann, xmin=ann.xmin + dx, ymin=ann.ymin + dy, xmax=ann.xmax + dx, ymax=ann.ymax + dy)
