#!/usr/bin/env python3
"""One-time converter: torchvision checkpoint -> weight archive directory.

Usage:
    python3 tools/convert_torchvision.py resnet50 OUT_DIR [--checkpoint FILE]
    python3 tools/convert_torchvision.py densenet121 OUT_DIR [--checkpoint FILE]

Without --checkpoint the ImageNet weights are downloaded through torchvision.
The canonical tensor-name mapping ships in data/<arch>_torchvision_map.json;
conv kernels are permuted from torch's (cout, cin, kh, kw) to the archive's
(kh, kw, cin, cout) row-major layout. Output: index.json + weights.bin
(little-endian float32).

Requires torch + torchvision (only for this conversion, never at runtime).
"""

import argparse
import json
import pathlib
import sys


def load_state_dict(arch, checkpoint):
    import torch

    if checkpoint:
        state = torch.load(checkpoint, map_location="cpu")
        return state.get("state_dict", state)
    import torchvision.models as models

    if arch == "resnet50":
        return models.resnet50(weights=models.ResNet50_Weights.IMAGENET1K_V1).state_dict()
    return models.densenet121(weights=models.DenseNet121_Weights.IMAGENET1K_V1).state_dict()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("arch", choices=["resnet50", "densenet121"])
    parser.add_argument("out_dir", type=pathlib.Path)
    parser.add_argument("--checkpoint", default=None, help="local .pth instead of download")
    parser.add_argument(
        "--map",
        default=None,
        help="mapping JSON (default: data/<arch>_torchvision_map.json next to the repo root)",
    )
    args = parser.parse_args()

    map_path = (
        pathlib.Path(args.map)
        if args.map
        else pathlib.Path(__file__).resolve().parent.parent
        / "data"
        / f"{args.arch}_torchvision_map.json"
    )
    mapping = json.loads(map_path.read_text())["tensors"]
    state = load_state_dict(args.arch, args.checkpoint)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    index = {"format_version": 1, "source": "imagenet", "tensors": {}}
    offset = 0
    with open(args.out_dir / "weights.bin", "wb") as bin_out:
        for name in sorted(mapping):
            spec = mapping[name]
            src = spec["source"]
            if src not in state:
                sys.exit(f"checkpoint is missing tensor '{src}' (wanted for '{name}')")
            tensor = state[src].float()
            if "permute" in spec:
                tensor = tensor.permute(*spec["permute"]).contiguous()
            data = tensor.numpy().astype("<f4").tobytes()
            index["tensors"][name] = {
                "shape": list(tensor.shape),
                "dtype": "float32",
                "offset": offset,
                "length": len(data),
            }
            bin_out.write(data)
            offset += len(data)
    (args.out_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    print(f"wrote {len(index['tensors'])} tensors ({offset} bytes) to {args.out_dir}")


if __name__ == "__main__":
    main()
