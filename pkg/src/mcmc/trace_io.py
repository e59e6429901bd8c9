"""JSON-lines chain traces.

One line per step. Line 0 carries w_0 (no proposal); every later line
carries the proposal, both proposal log-densities, α and the decision.
Each line also names its run so traces from many chains can share a file.
Non-finite numbers are written as null.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, IO, Iterable, List, Optional, Tuple

from src.core.errors import ConfigError
from src.lm.vocabulary import Sequence, Vocabulary
from src.mcmc.chain import ChainTrace


def _num(x: float) -> Optional[float]:
    return x if math.isfinite(x) else None


def trace_records(
    trace: ChainTrace,
    vocabulary: Vocabulary,
    *,
    method: str,
    run: int,
    benchmark: str = "",
) -> List[dict]:
    meta = {
        "benchmark": benchmark,
        "method": method,
        "kind": trace.params.kind.value,
        "k": trace.params.k,
        "run": run,
    }
    records = [
        {
            **meta,
            "step": 0,
            "state": vocabulary.decode(trace.states[0]),
            "proposal": None,
            "log_qf": None,
            "log_qr": None,
            "alpha": None,
            "accepted": None,
            "init_attempts": trace.init_attempts,
        }
    ]
    for step, state in zip(trace.steps, trace.states[1:]):
        records.append(
            {
                **meta,
                "step": step.step,
                "state": vocabulary.decode(state),
                "proposal": None if step.proposal is None else vocabulary.decode(step.proposal),
                "position": step.position,
                "log_qf": _num(step.log_qf),
                "log_qr": _num(step.log_qr),
                "alpha": step.alpha,
                "accepted": step.accepted,
                "length_exceeded": step.length_exceeded,
            }
        )
    return records


def single_sample_records(
    sample: Sequence,
    vocabulary: Vocabulary,
    *,
    method: str,
    run: int,
    benchmark: str = "",
    attempts: Optional[int] = None,
) -> List[dict]:
    """Trace for methods without chain steps (gcd, rejection): one step-0 line."""
    record = {
        "benchmark": benchmark,
        "method": method,
        "kind": "",
        "k": 0,
        "run": run,
        "step": 0,
        "state": vocabulary.decode(sample),
        "proposal": None,
        "log_qf": None,
        "log_qr": None,
        "alpha": None,
        "accepted": None,
    }
    if attempts is not None:
        record["attempts"] = attempts
    return [record]


def write_records(fh: IO[str], records: Iterable[dict]) -> int:
    n = 0
    for record in records:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        n += 1
    return n


@dataclass
class RunTrace:
    """States of one chain as read back from a trace file."""

    benchmark: str
    method: str
    kind: str
    k: int
    run: int
    states: List[List[str]] = field(default_factory=list)


def read_traces(path: Path) -> List[RunTrace]:
    """Group the lines of a trace file by run, states ordered by step."""
    path = Path(path)
    runs: Dict[Tuple[str, str, str, int], RunTrace] = {}
    steps: Dict[Tuple[str, str, str, int], Dict[int, List[str]]] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"Cannot read trace file {path}: {exc}") from exc
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            key = (rec["benchmark"], rec["method"], rec["kind"], int(rec["run"]))
            if key not in runs:
                runs[key] = RunTrace(rec["benchmark"], rec["method"], rec["kind"], int(rec["k"]), int(rec["run"]))
            steps.setdefault(key, {})[int(rec["step"])] = list(rec["state"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}:{n}: malformed trace line ({exc})") from exc
    for key, run in runs.items():
        by_step = steps[key]
        if sorted(by_step) != list(range(len(by_step))):
            raise ConfigError(f"{path}: run {run.run} has missing steps")
        run.states = [by_step[i] for i in range(len(by_step))]
    return sorted(runs.values(), key=lambda r: (r.benchmark, r.method, r.kind, r.run))
