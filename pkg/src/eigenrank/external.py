"""Segmenter backend that shells out to user-supplied train/predict programs.

Contract for the external program (one command may serve both roles)::

    <train_cmd> train --manifest <subset.json> --model-out <dir>
    <predict_cmd> predict --model <dir> --image <path> --out <mask.emsk>

The subset manifest has the same JSON layout as a pool manifest, with absolute
paths and the training seed in its ``seed`` field. ``predict`` must write a
valid ``.emsk`` mask. Any nonzero exit status aborts the run.
"""

from __future__ import annotations

import hashlib
import shlex
import subprocess
from pathlib import Path
from typing import Optional, Sequence, Union

from .engine import Pool
from .formats import MaskFormatError, dumps_report, read_mask
from .masks import BinaryMask

__all__ = [
    "ExternalBackend",
    "BackendError",
    "BackendSpawnError",
    "BackendExitError",
    "MalformedOutputError",
]


class BackendError(RuntimeError):
    pass


class BackendSpawnError(BackendError):
    pass


class BackendExitError(BackendError):
    def __init__(self, argv: Sequence[str], returncode: int, stderr: str):
        tail = stderr.strip().splitlines()[-1] if stderr.strip() else ""
        super().__init__(
            f"{Path(argv[0]).name} {argv[1] if len(argv) > 1 else ''} exited with status {returncode}"
            + (f": {tail}" if tail else "")
        )
        self.argv = list(argv)
        self.returncode = returncode
        self.stderr = stderr


class MalformedOutputError(BackendError):
    pass


Command = Union[str, Sequence[str]]


def _argv(cmd: Command) -> list[str]:
    return shlex.split(cmd) if isinstance(cmd, str) else list(cmd)


class ExternalBackend:
    """Run training and inference as subprocesses; models are directories."""

    name = "external"

    def __init__(
        self,
        train_command: Command,
        predict_command: Command,
        pool: Pool,
        work_dir: Union[str, Path],
        timeout: Optional[float] = None,
    ):
        self.train_argv = _argv(train_command)
        self.predict_argv = _argv(predict_command)
        self.pool = pool
        self.cases = {c.id: c for c in pool.cases}
        self.work_dir = Path(work_dir)
        self.timeout = timeout

    def _run(self, argv: list[str]) -> None:
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.SubprocessError) as exc:
            raise BackendSpawnError(f"cannot run {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            raise BackendExitError(argv, proc.returncode, proc.stderr)

    def train(self, case_ids: Sequence[str], seed: int) -> str:
        key = hashlib.blake2b(
            ("\n".join(case_ids) + f"\n{seed}").encode(), digest_size=8
        ).hexdigest()
        manifest = self.work_dir / "subsets" / f"{key}.json"
        model_dir = self.work_dir / "models" / key
        manifest.parent.mkdir(parents=True, exist_ok=True)
        model_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for cid in case_ids:
            c = self.cases[cid]
            e = {"id": cid}
            if c.image is not None:
                e["image"] = str(Path(c.image).resolve())
            if c.truth is not None:
                e["truth"] = str(Path(c.truth).resolve())
            entries.append(e)
        manifest.write_text(dumps_report({"seed": int(seed), "cases": entries}))
        self._run(self.train_argv + ["train", "--manifest", str(manifest), "--model-out", str(model_dir)])
        return str(model_dir)

    def predict(self, model: str, case_id: str) -> BinaryMask:
        case = self.cases[case_id]
        if case.image is None:
            raise BackendError(f"case {case_id!r} has no image path")
        out = self.work_dir / "predictions" / Path(model).name / f"{case_id}.emsk"
        out.parent.mkdir(parents=True, exist_ok=True)
        if out.exists():
            out.unlink()
        self._run(
            self.predict_argv
            + ["predict", "--model", str(model), "--image", str(case.image), "--out", str(out)]
        )
        try:
            return read_mask(out)
        except FileNotFoundError:
            raise MalformedOutputError(f"predict wrote no mask for case {case_id!r} at {out}") from None
        except MaskFormatError as exc:
            raise MalformedOutputError(f"malformed mask for case {case_id!r}: {exc}") from exc

    def model_ref(self, model: str) -> str:
        return str(model)

    def load_model(self, ref: str) -> str:
        if not Path(ref).is_dir():
            raise BackendError(f"model directory {ref!r} does not exist")
        return ref
