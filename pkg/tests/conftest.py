import sys
from pathlib import Path

# allow running the suite from a source checkout without installing
_src = Path(__file__).resolve().parents[1] / "src"
if _src.exists() and str(_src) not in sys.path:
    sys.path.insert(0, str(_src))
sys.path.insert(0, str(Path(__file__).resolve().parent))
