#!/usr/bin/env python3
"""Write MovieLens-100K as u.data (user, item, rating, timestamp; tab separated).

Tries the GroupLens archive first, then the copy bundled in the
pytorch-widedeep wheel (fetched with pip). The data is not redistributed
with this repository; see the GroupLens license.
"""

import argparse
import glob
import io
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
BUNDLED = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"


def from_grouplens(timeout):
    with urllib.request.urlopen(GROUPLENS, timeout=timeout) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data").decode()


def from_wheel():
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "pytorch-widedeep==1.7.0", "-d", tmp],
            check=True,
        )
        wheel = zipfile.ZipFile(glob.glob(os.path.join(tmp, "*.whl"))[0])
        df = pd.read_parquet(io.BytesIO(wheel.read(BUNDLED)))
    df = df[["user_id", "movie_id", "rating", "timestamp"]]
    return "".join(f"{u}\t{i}\t{r}\t{t}\n" for u, i, r, t in df.itertuples(index=False))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/ml-100k/u.data")
    ap.add_argument("--timeout", type=float, default=20)
    args = ap.parse_args()
    if os.path.exists(args.out):
        print(f"{args.out} already exists")
        return
    try:
        text = from_grouplens(args.timeout)
    except Exception as err:  # offline or blocked
        print(f"grouplens download failed ({err}); using the pytorch-widedeep copy", file=sys.stderr)
        text = from_wheel()
    rows = text.count("\n")
    if rows != 100000:
        sys.exit(f"expected 100000 rows, got {rows}")
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as f:
        f.write(text)
    print(f"wrote {rows} rows to {args.out}")


if __name__ == "__main__":
    main()
