"""
File output helpers.
Tables are written with full round-trip precision and explicit infinity
sentinels; every file lands atomically through a temporary sibling.
"""
import math
import os
import tempfile
from pathlib import Path
from typing import Union

import pandas as pd


def format_float(value: float) -> str:
    """17 significant digits, '.' separator, '+inf' / '-inf' for infinities."""
    value = float(value)
    if math.isinf(value):
        return "+inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return format(value, ".17g")


def frame_to_csv(frame: pd.DataFrame) -> str:
    """Render a DataFrame with every float column through format_float."""
    out = frame.copy()
    for column in out.columns:
        if pd.api.types.is_float_dtype(out[column]):
            out[column] = out[column].map(format_float)
    return out.to_csv(index=False, lineterminator="\n")


def atomic_write(path: Union[str, Path], text: str) -> Path:
    """Write text to path via a temporary file in the same directory and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path
