#!/usr/bin/env python3
"""Convert a torchvision VGG16 state_dict into the named-array weights archive.

    python tools/convert_vgg16.py vgg16-397923af.pth vgg16.hzs

The output is what `--backbone_weights` expects: kind "vgg16-weights" with
arrays conv1_1.weight, conv1_1.bias, ... conv5_3.bias.
"""

import argparse
import json
import struct
import zlib

import numpy as np
import torch

MAGIC = b"HZSARCH\0"
FORMAT_VERSION = 1

# Indices of the conv layers inside torchvision's vgg16().features.
FEATURE_CONVS = {
    0: "conv1_1", 2: "conv1_2",
    5: "conv2_1", 7: "conv2_2",
    10: "conv3_1", 12: "conv3_2", 14: "conv3_3",
    17: "conv4_1", 19: "conv4_2", 21: "conv4_3",
    24: "conv5_1", 26: "conv5_2", 28: "conv5_3",
}


def rename(state_dict):
    arrays = {}
    for index, name in FEATURE_CONVS.items():
        for part in ("weight", "bias"):
            key = f"features.{index}.{part}"
            if key not in state_dict:
                raise KeyError(f"state_dict has no '{key}'; is this a VGG16?")
            arrays[f"{name}.{part}"] = state_dict[key].detach().cpu().float().numpy()
    return arrays


def write_archive(path, kind, arrays, meta=None):
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f4")
        entries.append({"name": name, "dtype": "f32", "shape": list(a.shape),
                        "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"kind": kind, "meta": meta or {}, "arrays": entries},
                        separators=(",", ":")).encode()
    body = header + b"".join(blobs)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIQ", FORMAT_VERSION, 0, len(header)))
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("state_dict", help="torch.save'd VGG16 state_dict (.pth)")
    p.add_argument("output", help="archive to write")
    args = p.parse_args()
    sd = torch.load(args.state_dict, map_location="cpu", weights_only=True)
    write_archive(args.output, "vgg16-weights", rename(sd), {"source": args.state_dict})
    print(f"wrote {len(FEATURE_CONVS)} conv layers to {args.output}")


if __name__ == "__main__":
    main()
