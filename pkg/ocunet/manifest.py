"""
Sample manifests: which image/mask pairs exist, their split, and how to read them
"""

import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image

from .exceptions import DataError, ManifestError
from .masks import MaskEncoding

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
COLUMNS = ("image_path", "mask_path", "split")
DEFAULT_PATCH_SIZE = (512, 512)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ManifestEntry:
    image_path: Path
    mask_path: Path
    split: str = "train"

    def to_dict(self, root: Optional[Path] = None) -> Dict[str, str]:
        def rel(p: Path) -> str:
            return os.path.relpath(p, root) if root is not None else str(p)

        return {
            "image_path": rel(self.image_path),
            "mask_path": rel(self.mask_path),
            "split": self.split,
        }


@dataclass
class SampleManifest:
    """Image/mask pairs with their split, mask encoding and patch geometry."""

    entries: List[ManifestEntry]
    encoding: MaskEncoding
    patch_size: Tuple[int, int] = DEFAULT_PATCH_SIZE
    source: Optional[Path] = field(default=None, compare=False)

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> Dict[str, int]:
        return {name: len(self.split(name)) for name in SPLITS}

    def validate(self, check_files: bool = True) -> None:
        """
        Raises:
            ManifestError: On unknown splits, an image listed in two splits,
                or a referenced file that does not exist
        """
        where = f" in {self.source}" if self.source else ""
        seen: Dict[Path, str] = {}
        for entry in self.entries:
            if entry.split not in SPLITS:
                raise ManifestError(
                    f"unknown split '{entry.split}'{where}, expected one of {SPLITS}"
                )
            previous = seen.setdefault(entry.image_path, entry.split)
            if previous != entry.split:
                raise ManifestError(
                    f"{entry.image_path} appears in both '{previous}' and "
                    f"'{entry.split}' splits{where}"
                )
            if check_files:
                for path in (entry.image_path, entry.mask_path):
                    if not path.is_file():
                        raise ManifestError(f"missing file {path} referenced{where}")
        height, width = self.patch_size
        if height <= 0 or width <= 0:
            raise ManifestError(
                f"patch size must be positive, got {self.patch_size}{where}"
            )

    def to_frame(self, root: Optional[Path] = None) -> pd.DataFrame:
        rows = [e.to_dict(root) for e in self.entries]
        return pd.DataFrame(rows, columns=list(COLUMNS))


def parse_patch_size(text: str) -> Tuple[int, int]:
    """``"512x512"`` or ``"512"`` to (height, width)."""
    parts = str(text).lower().replace(" ", "").split("x")
    try:
        if len(parts) == 1:
            return int(parts[0]), int(parts[0])
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise ManifestError(f"cannot parse patch size '{text}', expected HxW")


def _parse_encoding(value: Any, source: Path) -> MaskEncoding:
    try:
        return MaskEncoding(str(value).strip().lower())
    except ValueError:
        raise ManifestError(
            f"unknown mask encoding '{value}' in {source}, "
            f"expected one of {[e.value for e in MaskEncoding]}"
        )


def _entries_from_frame(
    frame: pd.DataFrame, root: Path, source: Path
) -> List[ManifestEntry]:
    missing = [c for c in COLUMNS[:2] if c not in frame.columns]
    if missing:
        raise ManifestError(f"manifest {source} lacks columns {missing}")
    if "split" not in frame.columns:
        frame = frame.assign(split="train")
    entries = []
    for row in frame.itertuples(index=False):
        entries.append(
            ManifestEntry(
                image_path=root / str(row.image_path).strip(),
                mask_path=root / str(row.mask_path).strip(),
                split=str(row.split).strip().lower(),
            )
        )
    return entries


def _read_csv(path: Path) -> Tuple[Dict[str, str], pd.DataFrame]:
    header: Dict[str, str] = {}
    body: List[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if stripped.startswith("#") and not body:
            key, sep, value = stripped.lstrip("#").partition(":")
            if sep:
                header[key.strip().lower()] = value.strip()
        elif stripped:
            body.append(line)
    if not body:
        raise ManifestError(f"manifest {path} has no column header or records")
    frame = pd.read_csv(io.StringIO("\n".join(body)), dtype=str, skipinitialspace=True)
    return header, frame


def load_manifest(path: PathLike, check_files: bool = True) -> SampleManifest:
    """
    Read a CSV or JSON manifest.

    CSV manifests open with ``# encoding: orca3`` and ``# patch_size: HxW``
    lines followed by ``image_path,mask_path,split`` records. JSON manifests
    carry the same fields as keys with an ``entries`` list. Relative paths
    resolve against the manifest's directory.

    Raises:
        ManifestError: If the file is missing or malformed, or references
            missing files
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(path.read_text(encoding="utf-8"))
            header = {k: v for k, v in doc.items() if k != "entries"}
            frame = pd.DataFrame(doc.get("entries", []))
        else:
            header, frame = _read_csv(path)
    except (ValueError, pd.errors.ParserError) as e:
        raise ManifestError(f"cannot parse manifest {path}: {e}")

    if "encoding" not in header:
        raise ManifestError(f"manifest {path} does not declare an encoding")
    encoding = _parse_encoding(header["encoding"], path)
    patch = header.get("patch_size")
    if patch is None:
        patch_size = DEFAULT_PATCH_SIZE
    elif isinstance(patch, (list, tuple)):
        patch_size = (int(patch[0]), int(patch[1]))
    else:
        patch_size = parse_patch_size(patch)

    manifest = SampleManifest(
        _entries_from_frame(frame, root, path), encoding, patch_size, source=path
    )
    manifest.validate(check_files=check_files)
    logger.info(
        "Loaded manifest %s: %s encoding, patch %dx%d, splits %s",
        path,
        encoding.value,
        patch_size[0],
        patch_size[1],
        manifest.counts(),
    )
    return manifest


def save_manifest(manifest: SampleManifest, path: PathLike) -> Path:
    """Write ``manifest`` as CSV with paths relative to the file's directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = manifest.patch_size
    buffer = io.StringIO()
    buffer.write(f"# encoding: {manifest.encoding.value}\n")
    buffer.write(f"# patch_size: {height}x{width}\n")
    manifest.to_frame(root=path.parent).to_csv(buffer, index=False, lineterminator="\n")
    path.write_text(buffer.getvalue(), encoding="utf-8")
    return path


def _open(path: Path) -> Image.Image:
    try:
        image = Image.open(path)
        image.load()
        return image
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}")


def load_image(
    path: PathLike, resize_to: Optional[Tuple[int, int]] = None
) -> np.ndarray:
    """RGB image as float H x W x 3 in [0, 1]."""
    image = _open(Path(path)).convert("RGB")
    if resize_to is not None:
        image = image.resize((resize_to[1], resize_to[0]), Image.BILINEAR)
    return np.asarray(image, dtype=np.float64) / 255.0


def load_sample(
    entry: ManifestEntry,
    encoding: MaskEncoding,
    resize_to: Optional[Tuple[int, int]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Image in [0, 1] (H x W x 3) and decoded label map (H x W).

    ``resize_to`` rescales both to (height, width): the image bilinearly,
    the mask by nearest neighbour.

    Raises:
        DataError: If a file is unreadable or image and mask sizes differ
        MaskDecodingError: If the mask holds out-of-band intensities
    """
    image = _open(entry.image_path).convert("RGB")
    mask = _open(entry.mask_path)
    if mask.mode != "L":
        mask = mask.convert("L")
    if image.size != mask.size:
        raise DataError(
            f"image {entry.image_path} is {image.size[0]}x{image.size[1]} but mask "
            f"{entry.mask_path} is {mask.size[0]}x{mask.size[1]}"
        )
    if resize_to is not None:
        size = (resize_to[1], resize_to[0])
        image = image.resize(size, Image.BILINEAR)
        mask = mask.resize(size, Image.NEAREST)
    pixels = np.asarray(image, dtype=np.float64) / 255.0
    labels = encoding.decode(np.asarray(mask), source=str(entry.mask_path))
    return pixels, labels


def write_png(array: np.ndarray, path: PathLike) -> Path:
    """Save an 8-bit grayscale or RGB array losslessly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path, format="PNG")
    return path
