import json
import logging
import platform
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd
import scipy

logger = logging.getLogger(__name__)

# Written with 17 significant digits and read back with the round-trip parser
FLOAT_FORMAT = "%.17g"


def write_json(payload: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_to_builtin) + "\n")
    logger.info(f"Wrote {path}")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    return json.loads(Path(path).read_text())


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {path} ({len(frame)} rows)")
    return path


def read_frame(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])


def versions() -> Dict[str, str]:
    from .. import __version__

    return {
        "alpha_scaling": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "dict"):
        return value.dict()
    raise TypeError(f"cannot serialise {type(value).__name__}")
