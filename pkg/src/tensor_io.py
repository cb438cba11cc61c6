"""
Flat little-endian float32 tensor dumps with a JSON sidecar.

`<name>.bin` holds the raw values, `<name>.bin.json` holds
{shape, dim_order, pair_layout, dtype}. Values are promoted to float64 on load.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from pydantic import ValidationError

from errors import IngestionError
from schemas import TensorSidecar

logger = logging.getLogger(__name__)

WIRE_DTYPE = np.dtype("<f4")


def sidecar_path_for(path: str | os.PathLike) -> Path:
    return Path(f"{os.fspath(path)}.json")


@dataclass
class TensorDump:
    array: np.ndarray
    sidecar: TensorSidecar

    @classmethod
    def from_file(cls, path: str | os.PathLike, sidecar: Optional[str | os.PathLike] = None) -> Self:
        path = Path(path)
        side = Path(sidecar) if sidecar is not None else sidecar_path_for(path)
        if not side.exists():
            raise IngestionError(f"sidecar not found at {side}")
        if not path.exists():
            raise IngestionError(f"tensor file not found at {path}")
        try:
            meta = TensorSidecar.model_validate(json.loads(side.read_text()))
        except json.JSONDecodeError as e:
            raise IngestionError(f"sidecar {side} is not valid JSON: {e}") from e
        except ValidationError as e:
            raise IngestionError(f"invalid sidecar {side}: {e}") from e

        raw = path.read_bytes()
        expected = int(np.prod(meta.shape)) * WIRE_DTYPE.itemsize
        if len(raw) != expected:
            raise IngestionError(
                f"byte count mismatch for {path}: expected {expected} bytes for shape {meta.shape}, got {len(raw)}"
            )
        array = np.frombuffer(raw, dtype=WIRE_DTYPE).reshape(meta.shape).astype(np.float64)
        logger.info(f"Loaded tensor {path} shape={meta.shape}")
        return cls(array, meta)


def write_tensor(path: str | os.PathLike, array, dim_order: Optional[list[str]] = None) -> TensorSidecar:
    """Write `array` as little-endian float32 plus its sidecar; returns the sidecar."""
    arr = np.ascontiguousarray(np.asarray(array), dtype=WIRE_DTYPE)
    meta = TensorSidecar(shape=list(arr.shape), dim_order=dim_order)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(arr.tobytes())
    sidecar_path_for(path).write_text(json.dumps(meta.model_dump(), indent=2))
    return meta


def read_tensor(path: str | os.PathLike, sidecar: Optional[str | os.PathLike] = None) -> np.ndarray:
    return TensorDump.from_file(path, sidecar).array
