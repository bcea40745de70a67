#!/usr/bin/env python3
"""Export torchvision VGG16 conv weights as an autopainter checkpoint ("features" group).

    python tools/export_vgg16.py --out vgg16.json                 # ImageNet weights (downloads)
    python tools/export_vgg16.py --out vgg16.json --state-dict vgg16.pth
    python tools/export_vgg16.py --out vgg16.json --random-init 3  # offline, for format tests

--reference writes torch's own activations at the tap layer for a fixed probe image, so the
C++ extractor can be checked against it.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
import torchvision

FORMAT = "autopainter-checkpoint"
VERSION = 1
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)


def fnv1a_hex(text: str) -> str:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def canonical(obj) -> str:
    # Matches nlohmann::json::dump(): sorted keys, no whitespace, raw UTF-8.
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def conv_layers(model):
    """(name, module, index in model.features) for each conv, named conv<block>_<i>."""
    out, block, index = [], 1, 1
    for i, m in enumerate(model.features):
        if isinstance(m, torch.nn.MaxPool2d):
            block, index = block + 1, 1
        elif isinstance(m, torch.nn.Conv2d):
            out.append((f"conv{block}_{index}", m, i))
            index += 1
    return out


def load_model(args):
    if args.random_init is not None:
        torch.manual_seed(args.random_init)
        return torchvision.models.vgg16(weights=None), f"torchvision vgg16, random init seed {args.random_init}"
    if args.state_dict:
        model = torchvision.models.vgg16(weights=None)
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
        return model, f"torchvision vgg16, state dict {Path(args.state_dict).name}"
    weights = torchvision.models.VGG16_Weights.IMAGENET1K_V1
    return torchvision.models.vgg16(weights=weights), f"torchvision vgg16 {weights.name}"


def probe_image(size: int) -> torch.Tensor:
    y, x = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    planes = [np.sin(0.37 * (y * size + x) + c) for c in range(3)]
    return torch.tensor(np.stack(planes)[None], dtype=torch.float64)


def tap_features(model, layers, tap: int, images: torch.Tensor) -> torch.Tensor:
    """Activations after the ReLU of the tap-th conv for images in [-1, 1]."""
    mean = torch.tensor(MEAN, dtype=images.dtype).view(1, 3, 1, 1)
    std = torch.tensor(STD, dtype=images.dtype).view(1, 3, 1, 1)
    h = ((images + 1) * 0.5 - mean) / std
    stop = layers[tap - 1][2] + 1  # the ReLU right after the tap conv
    trunk = model.features[: stop + 1].to(images.dtype)
    with torch.no_grad():
        return trunk(h)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True, help="manifest path; the blob goes next to it with .bin")
    ap.add_argument("--tap", type=int, default=13, help="export conv layers 1..tap (default all 13)")
    src = ap.add_mutually_exclusive_group()
    src.add_argument("--state-dict", help="local torchvision vgg16 state dict (.pth)")
    src.add_argument("--random-init", type=int, metavar="SEED", help="seeded random weights, no download")
    ap.add_argument("--reference", help="write tap activations for the probe image to this JSON file")
    ap.add_argument("--reference-size", type=int, default=16)
    args = ap.parse_args(argv)

    model, provenance = load_model(args)
    model.eval()
    layers = conv_layers(model)
    if not 1 <= args.tap <= len(layers):
        ap.error(f"--tap must be in [1, {len(layers)}]")

    config = {"kind": "vgg16_features", "tap_layer": args.tap, "provenance": provenance}
    blob = bytearray()
    tensors = []
    for name, conv, _ in layers[: args.tap]:
        for suffix, t in ((".weight", conv.weight), (".bias", conv.bias)):
            a = t.detach().to(torch.float32).contiguous().numpy().astype("<f4")
            tensors.append({"group": "features", "name": name + suffix, "shape": list(a.shape),
                            "offset": len(blob), "count": int(a.size)})
            blob += a.tobytes()

    out = Path(args.out)
    if out.suffix == ".bin":
        ap.error("--out must not use the .bin extension")
    out.parent.mkdir(parents=True, exist_ok=True)
    blob_path = out.with_suffix(".bin")
    blob_path.write_bytes(bytes(blob))
    manifest = {"format": FORMAT, "version": VERSION, "blob": blob_path.name, "blob_bytes": len(blob),
                "groups": {"features": {"config": config, "config_hash": fnv1a_hex(canonical(config))}},
                "tensors": tensors, "metadata": {"exported_by": "export_vgg16.py"}}
    out.write_text(json.dumps(manifest, indent=2))

    if args.reference:
        img = probe_image(args.reference_size)
        feats = tap_features(model, layers, args.tap, img)
        ref = {"tap_layer": args.tap, "input_shape": list(img.shape), "shape": list(feats.shape),
               "input": img.flatten().tolist(), "values": feats.flatten().tolist()}
        Path(args.reference).write_text(json.dumps(ref))

    params = sum(t["count"] for t in tensors)
    print(f"wrote {out} ({args.tap} conv layers, {params} parameters, {provenance})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
