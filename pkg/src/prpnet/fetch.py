"""Optional downloader for the MNIST and Fashion-MNIST IDX files.

Nothing else in the package touches the network; training always reads
local files.
"""
from __future__ import annotations

import gzip
import shutil
import urllib.request
from pathlib import Path

MIRRORS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}
FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]


def fetch_dataset(name: str, dest, base_url: str | None = None, opener=urllib.request.urlopen) -> list[Path]:
    """Download and gunzip the four IDX files of ``name`` into ``dest/name``.

    Files already present are left alone.
    """
    if name not in MIRRORS and base_url is None:
        raise ValueError(f"no download location known for {name!r}")
    base = base_url or MIRRORS[name]
    target = Path(dest) / name
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for stem in FILES:
        out = target / stem
        if out.exists():
            written.append(out)
            continue
        tmp = out.with_suffix(".part")
        with opener(base + stem + ".gz") as resp, gzip.GzipFile(fileobj=resp) as gz, open(tmp, "wb") as fh:
            shutil.copyfileobj(gz, fh)
        tmp.replace(out)
        written.append(out)
    return written
