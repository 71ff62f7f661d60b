"""
Quick Data Viewer - Inspect a generated segmentation dataset
"""

import sys
from pathlib import Path

import pandas as pd

sys.path.insert(0, str(Path(__file__).parent))

from config.macmd_config import MANIFEST_NAME
from src.pipeline.pgm import read_pgm


def view_dataset(data_dir: str = "data/synthetic"):
    """Print manifest rows, per-class pixel fractions and image intensity statistics"""

    manifest_path = Path(data_dir) / MANIFEST_NAME
    if not manifest_path.exists():
        print(f"❌ No {MANIFEST_NAME} found in {data_dir}/")
        return

    df = pd.read_csv(manifest_path, sep="\t")
    count_cols = [c for c in df.columns if c.startswith("count_")]
    pixels = df[count_cols].sum(axis=1)

    print("=" * 70)
    print("DATA VIEWER - SEGMENTATION DATASET")
    print("=" * 70)
    print(f"\n📂 Directory: {data_dir}")
    print(f"\n📊 Samples: {len(df)} | Classes: {len(count_cols)} | Pixels per image: {int(pixels.iloc[0]):,}")

    print("\n" + "=" * 70)
    print("FIRST 10 ROWS")
    print("=" * 70)
    print(df.head(10).to_string(index=False))

    print("\n" + "=" * 70)
    print("CLASS FRACTIONS")
    print("=" * 70)
    fractions = df[count_cols].div(pixels, axis=0)
    summary = fractions.agg(["mean", "min", "max"]).T
    summary.index = [c.replace("count_", "class ") for c in summary.index]
    print(summary.to_string(float_format=lambda v: f"{v:.4f}"))
    absent = (df[count_cols[1:]] == 0).sum()
    for col, n in absent.items():
        if n:
            print(f"⚠️  {col.replace('count_', 'class ')} absent from {n} image(s)")

    print("\n" + "=" * 70)
    print("INTENSITY STATISTICS")
    print("=" * 70)
    levels = pd.Series([read_pgm(Path(data_dir) / name).mean() for name in df["image"]])
    print(f"   Mean grey level: {levels.mean():.2f}")
    print(f"   Range of image means: {levels.min():.2f} .. {levels.max():.2f}")

    print(f"\n📊 Data Quality:")
    print(f"   Missing Values: {df.isnull().sum().sum()}")
    print(f"   Duplicate Rows: {df.duplicated().sum()}")

    print("\n" + "=" * 70)
    print("✅ Dataset looks good! Ready for training!")
    print("=" * 70)


if __name__ == "__main__":
    view_dataset(*sys.argv[1:2])
