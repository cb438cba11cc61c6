from typing import IO, Dict, Optional

import pandas as pd

TOOL_NAME = "crpa-rope"
TOOL_VERSION = "0.1.0"

# CLI scheme name -> (position handling, frequency handling)
SCHEMES: Dict[str, tuple[str, str]] = {
    "pi-lr": ("fractional", "plain"),
    "pi-hr": ("integerized", "plain"),
    "ntk": ("integerized", "ntk"),
    "pi-ntk": ("scaled", "pi-ntk"),
    "yarn": ("integerized", "yarn"),
    "crpa": ("crpa", "plain"),
}

DEFAULT_SCHEMES: list[str] = list(SCHEMES)


def is_known_scheme(scheme: str) -> bool:
    return scheme in SCHEMES


def is_crpa(scheme: str) -> bool:
    return scheme == "crpa"


def provenance_line(argv: list[str]) -> str:
    return f"# {TOOL_NAME} {TOOL_VERSION} args: {' '.join(argv)}"


def write_csv(frame: pd.DataFrame, out: str | IO, provenance: Optional[str] = None) -> None:
    """Write `frame` as CSV with an optional leading comment line to a path or open stream."""
    if isinstance(out, str):
        with open(out, "w", newline="") as f:
            write_csv(frame, f, provenance)
        return
    if provenance:
        out.write(provenance.rstrip("\n") + "\n")
    frame.to_csv(out, index=False, lineterminator="\n")
