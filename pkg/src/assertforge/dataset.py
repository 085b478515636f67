"""Dataset assembly: the three record families, CoT validation, and the
length-binned 90/10 module-name split.

Routing of pipeline items is a total function of (compile status, verify
status); every item lands in exactly one family or one documented non-family
outcome. JSONL field names are part of the external contract and must not
drift.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .corpus import SourceUnit
from .errors import DomainError, InconsistentProvenance, SchemaError
from .textutil import normalize_line, parse_solution_reply

BIN_LABELS = ("(0,50]", "(50,100]", "(100,150]", "(150,200]", "(200,+inf)")


def length_bin(line_count: int) -> int:
    """Bin index for a code length; intervals are open below, closed above."""
    if line_count < 1:
        raise DomainError(f"line_count must be >= 1, got {line_count}")
    if line_count <= 50:
        return 0
    if line_count <= 100:
        return 1
    if line_count <= 150:
        return 2
    if line_count <= 200:
        return 3
    return 4


# ---------------------------------------------------------------------------
# Record families


@dataclass(frozen=True)
class PtRecord:
    """A failed-compilation source with its spec and syntax-error analysis."""

    code: str
    spec: str
    analysis: str

    def to_json(self) -> dict:
        return {"code": self.code, "spec": self.spec, "analysis": self.analysis}

    @classmethod
    def from_json(cls, obj: dict) -> "PtRecord":
        return cls(obj["code"], obj["spec"], obj["analysis"])


@dataclass(frozen=True)
class BugRecord:
    """A bug that compiled but never tripped the assertion."""

    spec: str
    buggy_code: str
    buggy_line: str
    corrected_line: str

    def __post_init__(self):
        if self.buggy_line not in self.buggy_code.split("\n"):
            raise ValueError("buggy_line must appear verbatim in buggy_code")

    def to_json(self) -> dict:
        return {
            "spec": self.spec,
            "buggy_code": self.buggy_code,
            "buggy_line": self.buggy_line,
            "corrected_line": self.corrected_line,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BugRecord":
        return cls(obj["spec"], obj["buggy_code"], obj["buggy_line"], obj["corrected_line"])


@dataclass(frozen=True)
class SvaBugRecord:
    """A bug/SVA pair whose verification failed, optionally with a validated CoT."""

    spec: str
    buggy_sv_code: str
    log: str
    step_by_step: bool
    buggy_line: str
    corrected_line: str
    cot: str | None = None

    def __post_init__(self):
        if self.step_by_step != (self.cot is not None):
            raise ValueError("step_by_step must hold exactly when a CoT is present")

    def to_json(self) -> dict:
        return {
            "spec": self.spec,
            "buggy_sv_code": self.buggy_sv_code,
            "log": self.log,
            "step_by_step": self.step_by_step,
            "buggy_line": self.buggy_line,
            "corrected_line": self.corrected_line,
            "cot": self.cot,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SvaBugRecord":
        return cls(
            obj["spec"],
            obj["buggy_sv_code"],
            obj["log"],
            obj["step_by_step"],
            obj["buggy_line"],
            obj["corrected_line"],
            obj.get("cot"),
        )


@dataclass(frozen=True)
class GoldenSolution:
    """Mechanical ground truth: the injected line and its pre-mutation original."""

    buggy_line: str
    corrected_line: str
    line_no: int = 0


# ---------------------------------------------------------------------------
# Split


@dataclass(frozen=True)
class SplitBin:
    interval: str
    train: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    bins: tuple[SplitBin, ...]

    def assignment_of(self, module_name: str) -> str | None:
        for b in self.bins:
            if module_name in b.train:
                return "train"
            if module_name in b.test:
                return "test"
        return None

    def unit_assignment(self, unit: SourceUnit) -> str | None:
        """A unit follows its first module name's assignment."""
        if not unit.module_names:
            return None
        return self.assignment_of(unit.module_names[0])

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "bins": [
                {"interval": b.interval, "train": list(b.train), "test": list(b.test)}
                for b in self.bins
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SplitPlan":
        return cls(
            obj["seed"],
            tuple(
                SplitBin(b["interval"], tuple(b["train"]), tuple(b["test"]))
                for b in obj["bins"]
            ),
        )


def _round_half_up(fraction: Fraction, n: int) -> int:
    return int(fraction * n + Fraction(1, 2))


def split(units: list[SourceUnit], seed: int, fraction: float = 0.9) -> SplitPlan:
    """Per-bin 90/10 module-name split, reproducible from the seed.

    Module names are binned by their first unit's code length, sorted, shuffled
    with a bin-local seeded PRNG, and the first round-half-up(fraction * N)
    go to train.
    """
    if not (0.0 < fraction < 1.0):
        raise DomainError("split fraction must lie in (0, 1)")
    frac = Fraction(str(fraction))
    names_by_bin: list[list[str]] = [[] for _ in BIN_LABELS]
    placed: set[str] = set()
    for u in units:
        if not u.module_names:
            raise DomainError(f"unit {u.id} has no module name")
        b = length_bin(u.line_count)
        for name in u.module_names:
            if name not in placed:
                placed.add(name)
                names_by_bin[b].append(name)
    bins = []
    for bi, names in enumerate(names_by_bin):
        ordered = sorted(names)
        rng = random.Random(f"{seed}:{bi}")
        rng.shuffle(ordered)
        k = _round_half_up(frac, len(ordered))
        bins.append(
            SplitBin(
                interval=BIN_LABELS[bi],
                train=tuple(sorted(ordered[:k])),
                test=tuple(sorted(ordered[k:])),
            )
        )
    return SplitPlan(seed, tuple(bins))


# ---------------------------------------------------------------------------
# CoT validation


def validate_cot(cot_text: str, golden: GoldenSolution) -> str:
    """'correct' when the reply's buggy line and fix both match the golden
    solution under trim/collapse-whitespace/drop-semicolon normalization."""
    if not cot_text:
        raise DomainError("empty CoT text")
    parsed = parse_solution_reply(cot_text)
    if parsed is None:
        return "incorrect"
    if normalize_line(parsed["buggy_line"]) == normalize_line(golden.buggy_line) and (
        normalize_line(parsed["fix"]) == normalize_line(golden.corrected_line)
    ):
        return "correct"
    return "incorrect"


# ---------------------------------------------------------------------------
# Routing and record building

ROUTE_OUTCOMES = (
    "pt",
    "bug",
    "svabug",
    "drop:mutant_syntax_error",
    "error:compile_tool_error",
    "error:verify_tool_error",
)


def route_unit(compile_status: str) -> str:
    """Stage-1 routing of a whole unit: pt, proceed, or a documented error."""
    if compile_status == "syntax_error":
        return "pt"
    if compile_status == "ok":
        return "proceed"
    if compile_status == "tool_error":
        return "error:compile_tool_error"
    raise DomainError(f"unknown compile status: {compile_status!r}")


def route_mutant(compile_status: str, verify_status: str | None) -> str:
    """Stage-2 routing of one injected bug. Total over the status product."""
    if compile_status == "tool_error":
        return "error:compile_tool_error"
    if compile_status == "syntax_error":
        # The compiler eliminates syntactically broken bugs before verification.
        return "drop:mutant_syntax_error"
    if compile_status == "ok":
        if verify_status == "assertion_failed":
            return "svabug"
        if verify_status in ("proven", "inconclusive"):
            return "bug"
        if verify_status == "tool_error":
            return "error:verify_tool_error"
        raise DomainError(f"unknown verify status: {verify_status!r}")
    raise DomainError(f"unknown compile status: {compile_status!r}")


@dataclass
class MutantItem:
    """One injected bug with its tool outcomes, ready for routing."""

    buggy_line: str
    corrected_line: str
    line_no: int
    compile_status: str
    verify_status: str | None = None
    buggy_code: str = ""  # mutant source without the assertion
    buggy_sv_code: str = ""  # mutant source with the assertion inserted
    log: str = ""
    cot_reply: str | None = None  # raw Stage-3 reply; None when not generated
    reserved_for_test: bool = False  # held out for the benchmark, not routed


@dataclass
class PipelineItem:
    """Everything Stage 1 and 2 produced for one unit."""

    unit_id: str
    compile_status: str
    code: str = ""
    spec: str = ""
    analysis: str = ""
    mutants: list[MutantItem] = field(default_factory=list)


@dataclass
class RecordBundle:
    pt: list[PtRecord] = field(default_factory=list)
    bug: list[BugRecord] = field(default_factory=list)
    svabug: list[SvaBugRecord] = field(default_factory=list)
    drops: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    cot_total: int = 0
    cot_correct: int = 0
    cot_unparseable: int = 0


def build_records(items: Iterable[PipelineItem], corpus_ids: set[str]) -> RecordBundle:
    """Route pipeline items into the three families and validate CoTs.

    Raises InconsistentProvenance when an item references a unit id absent
    from ``corpus_ids``.
    """
    bundle = RecordBundle()
    for item in items:
        if item.unit_id not in corpus_ids:
            raise InconsistentProvenance(f"unknown unit id: {item.unit_id}")
        outcome = route_unit(item.compile_status)
        if outcome == "pt":
            bundle.pt.append(PtRecord(item.code, item.spec, item.analysis))
            continue
        if outcome != "proceed":
            bundle.errors.append({"unit_id": item.unit_id, "outcome": outcome})
            continue
        for mut in item.mutants:
            routed = route_mutant(mut.compile_status, mut.verify_status)
            if routed == "bug":
                bundle.bug.append(
                    BugRecord(item.spec, mut.buggy_code, mut.buggy_line, mut.corrected_line)
                )
            elif routed == "svabug":
                golden = GoldenSolution(mut.buggy_line, mut.corrected_line, mut.line_no)
                cot_text = None
                step_by_step = False
                if mut.cot_reply is not None:
                    bundle.cot_total += 1
                    parsed = parse_solution_reply(mut.cot_reply)
                    if parsed is None:
                        bundle.cot_unparseable += 1
                    elif validate_cot(mut.cot_reply, golden) == "correct":
                        bundle.cot_correct += 1
                        cot_text = parsed["cot"] or ""
                        step_by_step = True
                bundle.svabug.append(
                    SvaBugRecord(
                        spec=item.spec,
                        buggy_sv_code=mut.buggy_sv_code,
                        log=mut.log,
                        step_by_step=step_by_step,
                        buggy_line=mut.buggy_line,
                        corrected_line=mut.corrected_line,
                        cot=cot_text,
                    )
                )
            elif routed.startswith("drop:"):
                bundle.drops.append(
                    {"unit_id": item.unit_id, "line": mut.line_no, "outcome": routed}
                )
            else:
                bundle.errors.append(
                    {"unit_id": item.unit_id, "line": mut.line_no, "outcome": routed}
                )
    return bundle


# ---------------------------------------------------------------------------
# JSONL IO


def write_jsonl(records: Iterable[dict], path: str | Path, header: dict | None = None) -> None:
    """One JSON object per line; optional metadata header as the first line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    """Parse a JSONL file; malformed input raises SchemaError with its line."""
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"no such file: {path}")
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"malformed JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise SchemaError("record is not a JSON object", line=lineno)
            rows.append(obj)
    return rows


def strip_meta_header(rows: list[dict]) -> tuple[dict | None, list[dict]]:
    """Split off the CLI's metadata header line when present."""
    if rows and "tool_version" in rows[0]:
        return rows[0], rows[1:]
    return None, rows
