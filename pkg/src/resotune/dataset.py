"""Labeled image sets: manifest-backed directories of progressive JPEGs."""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyDataset
from .jpegscan import ScanIndexedImage, index_scans

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class LabeledImage:
    image_id: str
    img: ScanIndexedImage
    label: int
    # Generator metadata for synthetic sets; empty for real data.
    meta: dict


class Dataset:
    """An ordered, immutable collection of labeled images.

    content_id is a digest of the manifest, identifying the calibration
    set independently of where it lives on disk.
    """

    def __init__(self, items: list[LabeledImage], classes: list[str], source: str = "",
                 content_id: str = ""):
        if not items:
            raise EmptyDataset("dataset contains no images")
        self.items = list(items)
        self.classes = list(classes)
        self.source = source
        self.content_id = content_id

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i: int) -> LabeledImage:
        return self.items[i]

    def __iter__(self):
        return iter(self.items)

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def load_dataset(root: str | Path) -> Dataset:
    """Read a dataset directory: manifest.json plus the JPEG files it lists."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise EmptyDataset(f"no {MANIFEST_NAME} under {root}")
    manifest_bytes = manifest_path.read_bytes()
    manifest = json.loads(manifest_bytes)
    items = []
    for rec in manifest["images"]:
        data = (root / rec["file"]).read_bytes()
        items.append(
            LabeledImage(
                image_id=rec["id"],
                img=index_scans(data),
                label=int(rec["label"]),
                meta={k: v for k, v in rec.items() if k not in ("id", "file", "label")},
            )
        )
    return Dataset(
        items,
        classes=manifest.get("classes", []),
        source=str(root),
        content_id=hashlib.sha256(manifest_bytes).hexdigest(),
    )
