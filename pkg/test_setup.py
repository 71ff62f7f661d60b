"""
Setup Verification - checks library installations, then builds a toy network once
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

LIBRARIES = [
    ("NumPy", "numpy"),
    ("Pandas", "pandas"),
    ("SciPy", "scipy.ndimage"),
    ("Pillow", "PIL.Image"),
    ("Click", "click"),
    ("PyYAML", "yaml"),
    ("Matplotlib", "matplotlib.pyplot"),
    ("Seaborn", "seaborn"),
    ("Joblib", "joblib"),
    ("tqdm", "tqdm"),
    ("python-json-logger", "pythonjsonlogger.json"),
    ("pytest", "pytest"),
]


def check_library(label, module):
    try:
        __import__(module)
    except ImportError as e:
        print(f"❌ {label:<20} - MISSING: {e}")
        return False
    print(f"✅ {label:<20} - Installed")
    return True


def check_toolkit():
    """One forward pass of the toy model; counts must match the analytic profile"""
    import numpy as np

    from config.macmd_config import TOY_CHANNELS
    from src.decoder.macmd import MacmdModel, ModelConfig
    from src.decoder.profiler import profile, stored_counts
    from src.numerics.tensor import Tensor, no_grad

    cfg = ModelConfig(channels=TOY_CHANNELS, num_classes=3)
    model = MacmdModel(cfg).eval()
    with no_grad():
        maps = model(Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32)))
    table = profile(cfg, 64)
    counts = stored_counts(model)
    ok = len(maps) == 3 and all((counts == table.loc[counts.index, "params"]).tolist())
    mark = "✅" if ok else "❌"
    print(f"{mark} {'MACMD toy model':<20} - {int(table.loc['total', 'params']):,} params")
    return ok


if __name__ == "__main__":
    print(f"🐍 Python Version: {sys.version}\n")
    print("=" * 60)
    passed = sum(check_library(label, module) for label, module in LIBRARIES)
    total = len(LIBRARIES)

    print("=" * 60)
    if passed < total:
        print(f"⚠️  {passed}/{total} libraries installed. Fix missing ones.")
        sys.exit(1)
    print(f"🎉 All {total}/{total} libraries installed")
    if not check_toolkit():
        sys.exit(1)
    print("=" * 60)
    print("✅ Ready to run: python main.py --help")
    print("=" * 60)
