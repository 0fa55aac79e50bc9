#!/usr/bin/env python3
"""Rebuild the LIBSVM-format `cadata` file from the California housing table.

The LIBSVM copy of cadata stores the raw StatLib columns (totals per block
group), while most Python distributions ship the per-household averages. The
totals are recovered exactly: households = population / AveOccup, and the room
and bedroom totals are the averages times households.

Usage:
    pip download --no-deps pytorch-widedeep -d /tmp/pw
    python3 tools/make_cadata.py /tmp/pw/pytorch_widedeep-*.whl data/cadata
"""
import io
import sys
import zipfile

import pandas as pd

MEMBER = "pytorch_widedeep/datasets/data/california_housing.parquet.brotli"


def main(wheel, out):
    with zipfile.ZipFile(wheel) as z:
        df = pd.read_parquet(io.BytesIO(z.read(MEMBER)))
    households = (df.Population / df.AveOccup).round()
    rooms = (df.AveRooms * households).round()
    bedrooms = (df.AveBedrms * households).round()
    label = (df.MedHouseVal * 100000).round()
    cols = [df.MedInc, df.HouseAge, rooms, bedrooms, df.Population, households,
            df.Latitude, df.Longitude]
    with open(out, "w") as f:
        for i in range(len(df)):
            feats = " ".join(f"{k + 1}:{c.iloc[i]:.10g}" for k, c in enumerate(cols))
            f.write(f"{label.iloc[i]:.0f} {feats}\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
