#!/usr/bin/env python3
"""Write a deterministic subsample of the UCI Adult census table as CSV.

The full table (adult.data + adult.test, 48,842 rows) ships inside the
``pytorch-widedeep`` wheel, so it can be fetched from PyPI:

    pip download pytorch-widedeep==1.7.0 --no-deps -d /tmp/wd
    python3 tools/make_adult_sample.py --wheel /tmp/wd/pytorch_widedeep-1.7.0-py3-none-any.whl

The sample keeps ``--complete`` rows without missing values plus ``--missing``
rows containing "?" tokens, so the loader's drop path is exercised.
Pass ``--complete 0`` to export every row.
"""
import argparse
import io
import zipfile

import numpy as np
import pandas as pd

COLUMNS = {
    "age": "age",
    "workclass": "workclass",
    "fnlwgt": "fnlwgt",
    "education": "education",
    "educational-num": "education-num",
    "marital-status": "marital-status",
    "occupation": "occupation",
    "relationship": "relationship",
    "race": "race",
    "gender": "sex",
    "capital-gain": "capital-gain",
    "capital-loss": "capital-loss",
    "hours-per-week": "hours-per-week",
    "native-country": "native-country",
    "income": "income",
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", required=True)
    ap.add_argument("--out", default="data/adult_sample.csv")
    ap.add_argument("--complete", type=int, default=10000)
    ap.add_argument("--missing", type=int, default=400)
    ap.add_argument("--seed", type=int, default=20170901)
    args = ap.parse_args()

    with zipfile.ZipFile(args.wheel) as wheel:
        raw = wheel.read("pytorch_widedeep/datasets/data/adult.parquet.brotli")
    df = pd.read_parquet(io.BytesIO(raw)).rename(columns=COLUMNS)[list(COLUMNS.values())]

    if args.complete > 0:
        has_missing = (df == "?").any(axis=1)
        rng = np.random.default_rng(args.seed)
        complete = df[~has_missing].sample(n=args.complete, random_state=rng)
        missing = df[has_missing].sample(n=args.missing, random_state=rng)
        df = pd.concat([complete, missing]).sample(frac=1.0, random_state=rng)

    df.to_csv(args.out, index=False)
    print(f"wrote {len(df)} rows to {args.out}")


if __name__ == "__main__":
    main()
