#!/usr/bin/env python3
"""Extract pooled penultimate CNN activations for a directory of images.

Writes the curation toolkit's binary feature format (magic ``FTRS``,
version 1, little-endian float32 rows keyed by the image filename stem),
so the output plugs straight into the diversity-sampling stages. The
backbone is any supported torchvision classifier; weights come from the
local torchvision cache (``--weights pretrained``), a state-dict file, or
a seeded random initialization for offline smoke runs.

Usage:
    extract_features.py --images <dir> --out <features.bin> \
        --backbone resnet18 --resolution 224 [--weights pretrained]
"""

from __future__ import annotations

import argparse
import os
import struct
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models

FEATURE_MAGIC = b"FTRS"
FEATURE_VERSION = 1

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# backbone name -> how to expose the pooled penultimate layer
SUPPORTED_BACKBONES = ("resnet18", "resnet34", "resnet50", "vgg16", "mobilenet_v2", "mobilenet_v3_small")

IMAGE_EXTS = {".jpg", ".jpeg", ".png", ".bmp", ".webp", ".tif", ".tiff"}


def build_backbone(name: str, weights: str) -> torch.nn.Module:
    """Instantiate the classifier and chop off its final logits layer."""
    if name not in SUPPORTED_BACKBONES:
        raise SystemExit(f"unsupported backbone {name!r}; choose from {', '.join(SUPPORTED_BACKBONES)}")
    factory = getattr(models, name)
    if weights == "pretrained":
        model = factory(weights="DEFAULT")
    elif weights.startswith("seed:"):
        torch.manual_seed(int(weights.split(":", 1)[1]))
        model = factory(weights=None)
    else:
        model = factory(weights=None)
        state = torch.load(weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    if hasattr(model, "fc"):
        model.fc = torch.nn.Identity()
    elif isinstance(model.classifier, torch.nn.Sequential):
        model.classifier[-1] = torch.nn.Identity()
    else:
        model.classifier = torch.nn.Identity()
    model.eval()
    return model


def load_tensor(path: Path, resolution: int) -> torch.Tensor | None:
    """Decode and normalize one image; None when the file is undecodable."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB").resize((resolution, resolution), Image.BILINEAR)
            array = np.asarray(img, dtype=np.float32) / 255.0
    except Exception as exc:
        print(f"skipping {path.name}: {exc}", file=sys.stderr)
        return None
    array = (array - np.asarray(IMAGENET_MEAN, dtype=np.float32)) / np.asarray(IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(array.transpose(2, 0, 1))


def write_feature_file(path: Path, rows: list[tuple[str, np.ndarray]]) -> None:
    """Atomic write of the binary feature format (temp file, then rename)."""
    dim = rows[0][1].shape[0] if rows else 0
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(struct.pack("<4sIIQ", FEATURE_MAGIC, FEATURE_VERSION, dim, len(rows)))
            for image_id, values in rows:
                ident = image_id.encode("utf-8")
                fh.write(struct.pack("<H", len(ident)))
                fh.write(ident)
                fh.write(values.astype("<f4", copy=False).tobytes())
        os.replace(tmp_name, path)
    except BaseException:
        os.unlink(tmp_name)
        raise


def extract(images_dir: Path, out_path: Path, backbone: str, resolution: int, batch_size: int, weights: str) -> int:
    model = build_backbone(backbone, weights)
    paths = sorted(p for p in images_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTS)

    # Vectors are keyed by decoded content: duplicate images share one
    # forward pass, so they get bit-identical features no matter how the
    # batch boundaries fall.
    import hashlib

    content_key: dict[str, str] = {}
    cache: dict[str, np.ndarray] = {}
    batch: list[tuple[str, torch.Tensor]] = []

    def flush():
        if not batch:
            return
        stacked = torch.stack([t for _, t in batch])
        with torch.inference_mode():
            out = model(stacked)
        for (key, _), vec in zip(batch, out):
            cache[key] = vec.numpy().astype(np.float32)
        batch.clear()

    order: list[str] = []
    for path in paths:
        tensor = load_tensor(path, resolution)
        if tensor is None:
            continue
        key = hashlib.sha256(tensor.numpy().tobytes()).hexdigest()
        content_key[path.stem] = key
        order.append(path.stem)
        if key not in cache and all(k != key for k, _ in batch):
            batch.append((key, tensor))
            if len(batch) >= batch_size:
                flush()
    flush()
    rows = [(image_id, cache[content_key[image_id]]) for image_id in order]
    write_feature_file(out_path, rows)
    return len(rows)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--images", required=True, type=Path, help="directory of images to embed")
    parser.add_argument("--out", required=True, type=Path, help="output feature file")
    parser.add_argument("--backbone", default="resnet18", choices=SUPPORTED_BACKBONES)
    parser.add_argument("--resolution", default=224, type=int, help="square input resolution")
    parser.add_argument("--batch-size", default=16, type=int)
    parser.add_argument(
        "--weights",
        default="pretrained",
        help="'pretrained' (local torchvision cache), a state-dict path, or 'seed:<int>'",
    )
    args = parser.parse_args(argv)
    if not args.images.is_dir():
        parser.error(f"--images {args.images} is not a directory")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    count = extract(args.images, args.out, args.backbone, args.resolution, args.batch_size, args.weights)
    print(f"wrote {count} vectors to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
