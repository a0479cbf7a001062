from __future__ import annotations

from typing import Annotated, Any

import numpy as np
from pydantic import PlainSerializer, PlainValidator


def _as_float_array(value: Any) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("array contains non-finite entries")
    return arr


# float64 ndarray field; serializes as (nested) lists so JSON round trips exactly
FloatArray = Annotated[
    np.ndarray,
    PlainValidator(_as_float_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]
