"""On-disk formats: mask files, pool manifests, run reports and simulation tables.

Mask file layout (``.emsk``)::

    b"EMSK1\\n"              magic
    b"<width> <height>\\n"   ASCII header
    width*height bytes      row-major pixels, each 0x00 or 0x01

Manifests and reports are JSON with sorted keys; floats are rounded to 12
significant digits so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .engine import Case, ComparisonRow, EvaluationResult, FailureReport, Pool, SelectionReport
from .masks import BinaryMask

__all__ = [
    "MaskFormatError",
    "BadMagicError",
    "BadHeaderError",
    "TruncatedMaskError",
    "BadPixelError",
    "TrailingBytesError",
    "ManifestError",
    "encode_mask",
    "decode_mask",
    "read_mask",
    "write_mask",
    "load_manifest",
    "write_manifest",
    "atomic_write",
    "fmt_float",
    "to_document",
    "dumps_report",
    "write_report",
    "simulation_csv",
]

MAGIC = b"EMSK1\n"
PathLike = Union[str, "os.PathLike[str]"]


class MaskFormatError(ValueError):
    """A mask file deviates from the ``.emsk`` byte layout."""


class BadMagicError(MaskFormatError):
    pass


class BadHeaderError(MaskFormatError):
    pass


class TruncatedMaskError(MaskFormatError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"mask payload truncated: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class BadPixelError(MaskFormatError):
    pass


class TrailingBytesError(MaskFormatError):
    pass


class ManifestError(ValueError):
    pass


def encode_mask(mask: BinaryMask) -> bytes:
    return MAGIC + f"{mask.width} {mask.height}\n".encode("ascii") + mask.pixels.tobytes()


def decode_mask(data: bytes) -> BinaryMask:
    if not data.startswith(MAGIC):
        raise BadMagicError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    rest = data[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise BadHeaderError("missing newline after size header")
    header = rest[:nl]
    try:
        fields = header.decode("ascii").split(" ")
        if len(fields) != 2 or not all(f.isdigit() for f in fields):
            raise ValueError
        width, height = int(fields[0]), int(fields[1])
    except ValueError:
        raise BadHeaderError(f"malformed size header {header!r}") from None
    if width <= 0 or height <= 0:
        raise BadHeaderError(f"non-positive mask size {width}x{height}")
    payload = rest[nl + 1:]
    expected = width * height
    if len(payload) < expected:
        raise TruncatedMaskError(expected, len(payload))
    if len(payload) > expected:
        raise TrailingBytesError(f"{len(payload) - expected} trailing bytes after mask payload")
    pixels = np.frombuffer(payload, dtype=np.uint8)
    bad = np.flatnonzero(pixels > 1)
    if bad.size:
        raise BadPixelError(f"pixel {bad[0]} has byte value {pixels[bad[0]]}, expected 0 or 1")
    return BinaryMask(width, height, pixels)


def read_mask(path: PathLike) -> BinaryMask:
    return decode_mask(Path(path).read_bytes())


def atomic_write(path: PathLike, data: Union[bytes, str]) -> None:
    """Write the whole file under a temporary name, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_mask(mask: BinaryMask, path: PathLike) -> None:
    atomic_write(path, encode_mask(mask))


def load_manifest(path: PathLike, load_truths: bool = True) -> Pool:
    """Read a JSON pool manifest.

    Relative image/truth paths are resolved against the manifest's directory.
    Ids must be unique and every referenced file must exist; both are checked
    before anything else happens.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("cases"), list):
        raise ManifestError(f"manifest {path} must be an object with a 'cases' list")
    base = path.parent
    cases = []
    seen = set()
    for i, entry in enumerate(doc["cases"]):
        cid = entry.get("id") if isinstance(entry, dict) else None
        if not isinstance(cid, str) or not cid:
            raise ManifestError(f"case #{i} in {path} has no valid id")
        if cid in seen:
            raise ManifestError(f"duplicate case id {cid!r} in {path}")
        seen.add(cid)
        files = {}
        for key in ("image", "truth"):
            ref = entry.get(key)
            if ref is None:
                files[key] = None
                continue
            p = Path(ref)
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ManifestError(f"case {cid!r}: {key} file {p} does not exist")
            files[key] = p
        diff = entry.get("difficulty")
        cases.append(Case(cid, files["image"], files["truth"], None if diff is None else float(diff)))
    truths = {}
    if load_truths:
        for c in cases:
            if c.truth is not None:
                truths[c.id] = read_mask(c.truth)
    return Pool(tuple(cases), seed=int(doc.get("seed", 0)), truths=truths)


def write_manifest(pool: Pool, path: PathLike, relative_to: Optional[PathLike] = None) -> None:
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent

    def rel(p):
        if p is None:
            return None
        p = Path(p)
        try:
            return p.resolve().relative_to(base.resolve()).as_posix()
        except ValueError:
            return str(p.resolve())

    cases = []
    for c in pool.cases:
        entry = {"id": c.id}
        if c.image is not None:
            entry["image"] = rel(c.image)
        if c.truth is not None:
            entry["truth"] = rel(c.truth)
        if c.difficulty is not None:
            entry["difficulty"] = c.difficulty
        cases.append(entry)
    atomic_write(path, dumps_report({"seed": pool.seed, "cases": cases}))


def fmt_float(x: float) -> float:
    """Round to 12 significant digits."""
    return float(f"{x:.12g}")


def _clean(obj: Any) -> Any:
    if is_dataclass(obj) and not isinstance(obj, type):
        return _clean(asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return fmt_float(float(obj))
    if isinstance(obj, Path):
        return str(obj)
    return obj


def to_document(obj: Any, **extra: Any) -> dict:
    """Plain JSON-ready dict for a report object plus extra top-level fields."""
    if isinstance(obj, SelectionReport):
        doc = {
            "kind": "selection",
            "parameters": {
                "k": obj.k,
                "iterations": obj.iterations,
                "seed": obj.seed,
                "backend": obj.backend,
                "metric": obj.metric,
                "score_mode": obj.score_mode,
            },
            "subsets": obj.subsets,
            "selected": obj.selected,
            "trailing": obj.trailing,
            "records": obj.records,
            "models": obj.models,
        }
    elif isinstance(obj, FailureReport):
        doc = {
            "kind": "failure-elimination",
            "parameters": {"k": obj.k, "iterations": obj.iterations, "seed": obj.seed, "backend": obj.backend},
            "committee_seed_cases": obj.committee_seed_cases,
            "pool": {"mean": obj.pool_mean, "stdev": obj.pool_stdev},
            "rounds": obj.rounds,
            "eliminated": obj.eliminated,
            "probe_scores": obj.probe_scores,
        }
    elif isinstance(obj, EvaluationResult):
        doc = {"kind": "evaluation", "mean": obj.mean, "stdev": obj.stdev, "scores": obj.scores}
    elif isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], ComparisonRow):
        doc = {"kind": "comparison", "rows": obj}
    else:
        doc = dict(obj)
    doc.update(extra)
    return _clean(doc)


def dumps_report(doc: Any) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(obj: Any, path: PathLike, **extra: Any) -> None:
    atomic_write(path, dumps_report(to_document(obj, **extra)))


def simulation_csv(rows: Iterable[Any]) -> str:
    """CSV with columns t, epsilon, mean_ratio, stdev_ratio, undefined_count."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "epsilon", "mean_ratio", "stdev_ratio", "undefined_count"])
    for r in rows:
        w.writerow([
            r.t,
            f"{r.epsilon:.12g}",
            "" if r.mean_ratio is None else f"{r.mean_ratio:.12g}",
            "" if r.stdev_ratio is None else f"{r.stdev_ratio:.12g}",
            r.undefined_count,
        ])
    return buf.getvalue()
