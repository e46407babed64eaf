#!/usr/bin/env python3
"""Fetch MNIST digits 0/1 and write IDX files under data/mnist/.

Tries the official distribution first; when those hosts are unreachable it
falls back to the `mnist` npm package, which bundles a genuine MNIST subset
(1001 zeros, 1127 ones) as pixel/255 arrays rounded to three decimals --
rounding back recovers the original bytes exactly.

Output files (official IDX format, big-endian):
    data/mnist/train-images-idx3-ubyte
    data/mnist/train-labels-idx1-ubyte
"""

import gzip
import json
import shutil
import struct
import subprocess
import sys
import tempfile
import urllib.request
from pathlib import Path

OUT_DIR = Path(__file__).resolve().parent.parent / "data" / "mnist"
OFFICIAL_BASE = "https://ossci-datasets.s3.amazonaws.com/mnist/"


def write_idx(images: list[bytes], labels: list[int], rows: int, cols: int) -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    n = len(images)
    with open(OUT_DIR / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, rows, cols))
        for img in images:
            f.write(img)
    with open(OUT_DIR / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))
    print(f"wrote {n} samples to {OUT_DIR}")


def try_official() -> bool:
    try:
        with tempfile.TemporaryDirectory() as tmp:
            paths = {}
            for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"):
                url = OFFICIAL_BASE + name + ".gz"
                dest = Path(tmp) / name
                with urllib.request.urlopen(url, timeout=30) as r, open(dest, "wb") as f:
                    f.write(gzip.decompress(r.read()))
                paths[name] = dest
            OUT_DIR.mkdir(parents=True, exist_ok=True)
            for name, p in paths.items():
                shutil.copy(p, OUT_DIR / name)
        print(f"wrote official MNIST train split to {OUT_DIR}")
        return True
    except Exception as e:  # noqa: BLE001
        print(f"official download unavailable ({e}); falling back to npm subset")
        return False


def from_npm() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            ["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True, capture_output=True
        )
        tarball = next(Path(tmp).glob("mnist-*.tgz"))
        subprocess.run(["tar", "xzf", tarball.name], cwd=tmp, check=True)
        images, labels = [], []
        for digit in (0, 1):
            data = json.loads(
                (Path(tmp) / "package" / "src" / "digits" / f"{digit}.json").read_text()
            )["data"]
            assert len(data) % 784 == 0
            for i in range(0, len(data), 784):
                # values are pixel/255 rounded to 3 decimals; rounding back
                # is exact because the error is below 0.5/255
                images.append(bytes(round(v * 255) for v in data[i : i + 784]))
                labels.append(digit)
        write_idx(images, labels, 28, 28)


def main() -> int:
    if not try_official():
        from_npm()
    return 0


if __name__ == "__main__":
    sys.exit(main())
