"""Bundled IR corpus: loaders for the shipped programs plus per-function
argument-generation recipes used by the evaluation harnesses.

`python -m taintsum.corpus [outdir]` materializes the .ir files for CLI
experiments.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .ir import Module
from .parser import parse_module

NAMES = ("student_flow", "libcorpus", "bench_memcpy", "bench_user")


def load_text(name: str) -> str:
    if name not in NAMES:
        raise KeyError(f"unknown corpus program {name!r}; have {NAMES}")
    return (resources.files(__package__) / "corpus" / f"{name}.ir").read_text()


def load_module(name: str) -> Module:
    return parse_module(load_text(name))


def materialize(outdir: str | Path) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in NAMES:
        p = out / f"{name}.ir"
        p.write_text(load_text(name), encoding="utf-8")
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# Argument recipes for the library-function drivers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntArg:
    """Scalar argument; full-range uniform unless bounded."""
    ty: str = "i32"
    lo: Optional[int] = None
    hi: Optional[int] = None


@dataclass(frozen=True)
class CStringArg:
    """Heap buffer holding a random printable NUL-terminated string."""
    cap: int = 33
    min_len: int = 1
    max_len: int = 32


@dataclass(frozen=True)
class BufArg:
    """Zero-filled writable heap buffer."""
    size: int = 64


@dataclass(frozen=True)
class StructPtrArg:
    """Pointer to a freshly generated struct value."""
    struct: str


@dataclass(frozen=True)
class CountArg:
    """Byte-count argument coupled to an earlier string argument, the
    usual strcpy-via-memcpy calling shape."""
    of: int
    plus: int = 1


# Count-like parameters are bounded by their buffers and memset's fill
# byte stays printable so the written region keeps a measurable string
# extent; everything else follows the default random recipes.
DRIVERS: dict[str, tuple] = {
    "memcpy":      (BufArg(64), CStringArg(), CountArg(of=1, plus=1)),
    "memset_a":    (BufArg(64), IntArg("i32", 33, 126), IntArg("i64", 1, 32)),
    "strcpy_a":    (BufArg(64), CStringArg()),
    "strlen_a":    (CStringArg(),),
    "abs_a":       (IntArg("i32"),),
    "pair_cpy":    (StructPtrArg("pair"), StructPtrArg("pair")),
    "student_cpy": (StructPtrArg("student"),),
    "enroll":      (StructPtrArg("student"),),
    "copy_twice":  (BufArg(64), BufArg(64), CStringArg(), CountArg(of=2, plus=1)),
}


def main(argv: Optional[list[str]] = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    dest = args[0] if args else "corpus"
    for p in materialize(dest):
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
