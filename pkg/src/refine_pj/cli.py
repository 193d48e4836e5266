"""Command-line harness: build channel models, run checks, print reports.

Structured reports are JSON lines.  The first line is a ``meta`` record;
every later line is a ``row`` (refinement or property check of a grid cell),
a ``preamble`` record (sanity checks of one spec or impl) or an
``assertion`` record (a check from a source file).  Keys are written in
sorted order so equal reports render to equal bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

from . import __version__
from .errors import BoundExceeded, CspSyntaxError, ModelError
from .models import TABLE_ROWS, Model, ModelConfig
from .refinement import (
    SemanticModel,
    check_deadlock_free,
    check_deterministic,
    check_divergence_free,
    refines,
)
from .semantics import DEFAULT_STATE_BOUND, explore

DIRECTIONS = ("spec-impl", "impl-spec")
REFINEMENT_CHECKS = ("traces", "failures", "fd")
PROPERTY_CHECKS = ("deadlock", "divergence", "determinism")
DEFAULT_ROWS = {"one2many": (1, 2), "many2one": (2, 1), "many2many": (2, 2)}


@dataclass(frozen=True)
class Row:
    """One cell of the grid.

    ``verdict`` is ``T``, ``F``, ``FD`` or ``fail`` for refinement checks
    (the strongest model that holds, up to the requested one), ``holds`` or
    ``fails`` for property checks and ``bound`` when exploration gave up.
    """

    shape: str
    writers: int
    readers: int
    schedulers: int
    direction: str
    model: str
    verdict: str
    counterexample: str | None
    states: int
    seconds: float


@dataclass(frozen=True)
class Preamble:
    shape: str
    writers: int
    readers: int
    schedulers: int
    subject: str  # 'spec' or 'impl'
    divergence_free: bool
    deadlock_free: bool
    deterministic: bool


@dataclass(frozen=True)
class AssertionResult:
    text: str
    holds: bool
    counterexample: str | None
    seconds: float


@dataclass
class Report:
    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    preamble: list = field(default_factory=list)
    assertions: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if any(r.verdict == "bound" for r in self.rows):
            return 2
        failed = any(not _row_holds(r) for r in self.rows) or any(not a.holds for a in self.assertions)
        return 1 if failed else 0

    def without_timings(self) -> "Report":
        """Copy with wall-clock fields zeroed, for comparing runs."""
        return Report(
            dict(self.meta),
            [Row(**{**asdict(r), "seconds": 0.0}) for r in self.rows],
            list(self.preamble),
            [AssertionResult(a.text, a.holds, a.counterexample, 0.0) for a in self.assertions],
        )


def _row_holds(r: Row) -> bool:
    if r.model in PROPERTY_CHECKS:
        return r.verdict == "holds"
    return r.verdict == SemanticModel.parse(r.model).tag


# ---------------------------------------------------------------- grid


@dataclass(frozen=True)
class Cell:
    """All requested work for one configuration."""

    cfg: ModelConfig
    directions: tuple
    check: str
    state_bound: int


def table_grid(schedulers=(1, 2, 3, 4), directions=DIRECTIONS, check="failures",
               state_bound: int = DEFAULT_STATE_BOUND) -> list:
    """The results-table grid: five channel shapes by ``schedulers``."""
    return [
        Cell(ModelConfig.of(w, r, n, shape), tuple(directions), check, state_bound)
        for shape, w, r in TABLE_ROWS
        for n in schedulers
    ]


def _verdict(spec, impl, check: str) -> tuple:
    """Strongest model up to ``check`` in which ``spec ⊑ impl`` holds."""
    order = REFINEMENT_CHECKS[: REFINEMENT_CHECKS.index(check) + 1]
    worst = None
    for model in reversed(order):
        v = refines(spec, impl, model)
        if v.holds:
            return v.model.tag, worst
        if worst is None:
            worst = str(v.counterexample)
    return "fail", worst


def run_cell(cell: Cell) -> tuple:
    """Rows and preamble records for one configuration."""
    cfg = cell.cfg
    key = (cfg.shape, len(cfg.writers), len(cfg.readers), cfg.schedulers)
    m = Model(cfg)
    start = time.perf_counter()
    try:
        spec = explore(m.env, m.spec, cell.state_bound)
        impl = explore(m.env, m.impl, cell.state_bound)
    except BoundExceeded as exc:
        took = time.perf_counter() - start
        subjects = ("spec", "impl") if cell.check in PROPERTY_CHECKS else cell.directions
        return [Row(*key, d, cell.check, "bound", str(exc), exc.states, took) for d in subjects], []
    explored = time.perf_counter() - start
    rows = []
    if cell.check in PROPERTY_CHECKS:
        for subject, lts in (("spec", spec), ("impl", impl)):
            t0 = time.perf_counter()
            v = _property(lts, cell.check)
            cex = None if v.holds else str(v.counterexample)
            rows.append(Row(*key, subject, cell.check, "holds" if v.holds else "fails", cex, lts.num_states,
                            explored + time.perf_counter() - t0))
        return rows, []
    for direction in cell.directions:
        t0 = time.perf_counter()
        left, right = (spec, impl) if direction == "spec-impl" else (impl, spec)
        verdict, cex = _verdict(left, right, cell.check)
        rows.append(Row(*key, direction, cell.check, verdict, cex, impl.num_states,
                        explored + time.perf_counter() - t0))
    pre = [
        Preamble(*key, subject, check_divergence_free(lts).holds, check_deadlock_free(lts).holds,
                 check_deterministic(lts).holds)
        for subject, lts in (("spec", spec), ("impl", impl))
    ]
    return rows, pre


def _property(lts, check: str):
    if check == "deadlock":
        return check_deadlock_free(lts)
    if check == "divergence":
        return check_divergence_free(lts)
    return check_deterministic(lts)


def worker_count() -> int:
    raw = os.environ.get("REFINE_PJ_WORKERS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError("REFINE_PJ_WORKERS must be a positive integer")
    return n


def run_experiment(grid, workers: int | None = None) -> Report:
    """Run every cell; rows keep grid order whatever the completion order."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(grid))) as pool:
            results = list(pool.map(run_cell, grid))
    else:
        results = [run_cell(c) for c in grid]
    report = Report(_meta(max(c.state_bound for c in grid)))
    for rows, pre in results:
        report.rows.extend(rows)
        report.preamble.extend(pre)
    return report


def _meta(state_bound: int) -> dict:
    return {"tool": "refine-pj", "version": __version__, "state_bound": state_bound}


# ---------------------------------------------------------------- source files


def run_source(text, state_bound: int = DEFAULT_STATE_BOUND) -> Report:
    """Check every assertion of a source text."""
    from .cspm import format_assertion, parse

    env, assertions = parse(text)
    report = Report(_meta(state_bound))
    for a in assertions:
        t0 = time.perf_counter()
        left = explore(env, a.left, state_bound)
        if a.kind == "refinement":
            v = refines(left, explore(env, a.right, state_bound), a.model)
        elif a.kind == "deadlock free":
            v = check_deadlock_free(left)
        elif a.kind == "divergence free":
            v = check_divergence_free(left)
        else:
            v = check_deterministic(left, a.model or SemanticModel.FD)
        cex = None if v.holds else str(v.counterexample)
        report.assertions.append(AssertionResult(format_assertion(a), v.holds, cex, time.perf_counter() - t0))
    return report


# ---------------------------------------------------------------- rendering


def render_report(r: Report, format: str = "table") -> str:
    if format == "structured":
        return _render_structured(r)
    if format != "table":
        raise ValueError(f"unknown format {format}")
    return _render_table(r)


def _render_structured(r: Report) -> str:
    lines = [json.dumps({"record": "meta", **r.meta}, sort_keys=True, ensure_ascii=False)]
    for kind, items in (("row", r.rows), ("preamble", r.preamble), ("assertion", r.assertions)):
        for item in items:
            lines.append(json.dumps({"record": kind, **asdict(item)}, sort_keys=True, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def read_report(text: str) -> Report:
    """Inverse of the structured rendering."""
    report = Report()
    kinds = {"row": (Row, report.rows), "preamble": (Preamble, report.preamble),
             "assertion": (AssertionResult, report.assertions)}
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec.pop("record")
        if kind == "meta":
            report.meta = rec
        else:
            cls, dest = kinds[kind]
            dest.append(cls(**rec))
    return report


_TITLES = {"spec-impl": "Spec ⊑ Impl", "impl-spec": "Impl ⊑ Spec", "spec": "Spec", "impl": "Impl"}


def _render_table(r: Report) -> str:
    out = [f"refine-pj {r.meta.get('version', __version__)}  state bound {r.meta.get('state_bound', '-')}"]
    if not r.assertions or r.rows:
        out.extend(_grid_tables(r.rows))
    if r.preamble:
        out.append("")
        out.append("Preamble (divergence-free / deadlock-free / deterministic)")
        for p in r.preamble:
            marks = ["yes" if x else "no" for x in (p.divergence_free, p.deadlock_free, p.deterministic)]
            out.append(f"  {p.writers}-{p.readers} x{p.schedulers} {p.subject:<4}  " + " / ".join(marks))
    for a in r.assertions:
        line = f"{a.text}: {'holds' if a.holds else 'fails'}"
        if a.counterexample:
            line += f"  {a.counterexample}"
        out.append(line)
    fails = [row for row in r.rows if row.counterexample]
    if fails:
        out.append("")
        out.append("Counterexamples")
        for row in fails:
            out.append(f"  {row.writers}-{row.readers} x{row.schedulers} {_TITLES[row.direction]} [{row.model}]: "
                       f"{row.counterexample}")
    return "\n".join(out) + "\n"


def _grid_tables(rows: list) -> list:
    """One block per direction, laid out processes x schedulers."""
    cols = sorted({row.schedulers for row in rows}) or [1, 2, 3, 4]
    directions = list(dict.fromkeys(row.direction for row in rows))
    if not directions:
        directions = ["spec-impl"]
    out = []
    width = 6
    for d in directions:
        block = [row for row in rows if row.direction == d]
        models = sorted({row.model for row in block})
        title = _TITLES.get(d, d) + (f" [{', '.join(models)}]" if models else "")
        out.append("")
        out.append(title)
        out.append(" " * 14 + "Number of schedulers".center(width * len(cols)))
        out.append(f"{'Processes':<14}" + "".join(f"{c:^{width}}" for c in cols))
        labels = list(dict.fromkeys((row.writers, row.readers) for row in block))
        for w, rd in labels:
            cells = {row.schedulers: row.verdict for row in block if (row.writers, row.readers) == (w, rd)}
            out.append(f"{f'{w}-{rd}':<14}" + "".join(f"{cells.get(c, '-'):^{width}}" for c in cols))
    return out


# ---------------------------------------------------------------- command line


def parse_schedulers(text: str) -> tuple:
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if lo < 1 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad scheduler range {text}")
        return tuple(range(lo, hi + 1))
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("scheduler count must be positive")
    return (n,)


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refine-pj", description="Refinement checks for shared-channel scheduler models.")
    p.add_argument("--shape", choices=("many2one", "one2many", "many2many"))
    p.add_argument("--writers", type=_positive)
    p.add_argument("--readers", type=_positive)
    p.add_argument("--schedulers", type=parse_schedulers, default=(1, 2, 3, 4), help="K or K1..K2")
    p.add_argument("--check", choices=REFINEMENT_CHECKS + PROPERTY_CHECKS, default="failures")
    p.add_argument("--direction", choices=DIRECTIONS + ("both",), default="both")
    p.add_argument("--state-bound", type=_positive, default=DEFAULT_STATE_BOUND)
    p.add_argument("--format", choices=("table", "structured"), default="table")
    p.add_argument("--dump", choices=("spec", "impl"), help="print the LTS of one configuration as 'src event dst' lines")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--file", help="check the assertions of a source file")
    src.add_argument("--stdin", action="store_true", help="read a source file from standard input")
    return p


def grid_from_args(args) -> list:
    if args.shape is None and args.writers is None and args.readers is None:
        rows = TABLE_ROWS
    else:
        w, r = DEFAULT_ROWS.get(args.shape, (None, None))
        w = args.writers or w
        r = args.readers or r
        if w is None or r is None:
            raise ValueError("give --shape or both --writers and --readers")
        rows = [(args.shape, w, r)]
    directions = DIRECTIONS if args.direction == "both" else (args.direction,)
    return [
        Cell(ModelConfig.of(w, r, n, shape), directions, args.check, args.state_bound)
        for shape, w, r in rows
        for n in args.schedulers
    ]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.file or args.stdin:
            if args.file:
                with open(args.file, "rb") as fh:
                    text = fh.read()
            else:
                text = sys.stdin.buffer.read()
            report = run_source(text, args.state_bound)
        elif args.dump:
            cell = grid_from_args(args)[0]
            m = Model(cell.cfg)
            lts = explore(m.env, m.spec if args.dump == "spec" else m.impl, args.state_bound)
            sys.stdout.write(lts.dump())
            return 0
        else:
            report = run_experiment(grid_from_args(args))
    except CspSyntaxError as exc:
        print(f"refine-pj: syntax error at {exc}", file=sys.stderr)
        return 2
    except (ModelError, ValueError, OSError) as exc:
        print(f"refine-pj: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(render_report(report, args.format))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
