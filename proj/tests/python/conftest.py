"""Makes the staticquant package importable from a plain CMake build tree."""

import sys
from pathlib import Path


def _ensure_importable() -> None:
    try:
        import staticquant  # noqa: F401
        return
    except ImportError:
        pass
    root = Path(__file__).resolve().parents[2]
    pkg_dir = root / "python"
    candidates = list((root / "build").rglob("_core*.so")) if (root / "build").exists() else []
    if candidates:
        sys.path.insert(0, str(pkg_dir))
        sys.path.insert(0, str(candidates[0].parent.parent))
        # place the extension next to the package sources
        target = pkg_dir / "staticquant" / candidates[0].name
        if not target.exists():
            import shutil

            shutil.copy2(candidates[0], target)


_ensure_importable()
