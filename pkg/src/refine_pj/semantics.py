"""Operational semantics: process expressions to labelled transition systems.

Residual processes are interned as configuration tuples so that structurally
equal states share one id.  Parallel compositions are n-ary and their operand
lists are sorted, which makes ``P ||| Q`` and ``Q ||| P`` (and any number of
identical interleaved copies) the same state.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import AtomOutOfDomain, ArityMismatch, BoundExceeded, EvaluationError, UnboundState
from .syntax import (
    TAU,
    TICK,
    AlphaParallel,
    Call,
    Div,
    Environment,
    Event,
    ExtChoice,
    GenParallel,
    Guard,
    Hide,
    IfThenElse,
    Interleave,
    IntChoice,
    Out,
    Prefix,
    Proc,
    Replicated,
    Seq,
    Skip,
    Stop,
    evaluate,
    free_names,
    render_value,
    validate,
)

DEFAULT_STATE_BOUND = 32_000_000

# configuration ids of the fixed leaves
STOP_ID, SKIP_ID, DIV_ID, OMEGA_ID = 0, 1, 2, 3
TAU_LABEL, TICK_LABEL = 0, 1


class Semantics:
    """Interned configurations and memoized transitions over one environment."""

    def __init__(self, env: Environment):
        self.env = env
        self.configs: list = []
        self.ids: dict = {}
        self.events: list = [TAU, TICK]
        self.event_ids: dict = {TAU: TAU_LABEL, TICK: TICK_LABEL}
        self._trans: dict = {}
        self._calls: dict = {}
        for c in (("stop",), ("skip",), ("div",), ("omega",)):
            self._intern(c)

    # -- interning

    def _intern(self, config) -> int:
        i = self.ids.get(config)
        if i is None:
            i = len(self.configs)
            self.ids[config] = i
            self.configs.append(config)
        return i

    def label(self, e: Event) -> int:
        i = self.event_ids.get(e)
        if i is None:
            i = len(self.events)
            self.event_ids[e] = i
            self.events.append(e)
        return i

    # -- entering a term

    def enter(self, p: Proc, bindings: Mapping) -> int:
        t = type(p)
        if t is Prefix:
            return self._intern(("prefix", p, _restrict(p, bindings)))
        if t is Stop:
            return STOP_ID
        if t is Skip:
            return SKIP_ID
        if t is Div:
            return DIV_ID
        if t is Call:
            args = tuple(evaluate(a, bindings, self.env) for a in p.args)
            key = (p.name, args)
            c = self._calls.get(key)
            if c is None:
                d = self.env.lookup(p.name, len(args))
                c = self.enter(d.body, dict(zip(d.params, args)))
                self._calls[key] = c
            return c
        if t is ExtChoice:
            return self.ext([self.enter(b, bindings) for b in p.branches])
        if t is IntChoice:
            return self.internal([self.enter(b, bindings) for b in p.branches])
        if t is Guard:
            if _truth(evaluate(p.cond, bindings, self.env)):
                return self.enter(p.proc, bindings)
            return STOP_ID
        if t is IfThenElse:
            if _truth(evaluate(p.cond, bindings, self.env)):
                return self.enter(p.then, bindings)
            return self.enter(p.orelse, bindings)
        if t is GenParallel:
            sync = self._event_set(p.sync, bindings)
            return self.par(sync, [self.enter(p.left, bindings), self.enter(p.right, bindings)])
        if t is Interleave:
            return self.par(frozenset(), [self.enter(q, bindings) for q in p.procs])
        if t is AlphaParallel:
            a = self._event_set(p.alpha_left, bindings)
            b = self._event_set(p.alpha_right, bindings)
            return self._intern(("apar", a, b, self.enter(p.left, bindings), self.enter(p.right, bindings)))
        if t is Hide:
            return self.hide(self._event_set(p.hidden, bindings), self.enter(p.proc, bindings))
        if t is Seq:
            first = self.enter(p.first, bindings)
            return self._intern(("seq", first, p.second, _restrict(p.second, bindings)))
        if t is Replicated:
            over = evaluate(p.over, bindings, self.env)
            if not isinstance(over, frozenset):
                raise EvaluationError(f"replicated operator needs a set, got {render_value(over)}")
            ids = []
            for v in sorted(over, key=_sort_key):
                inner = dict(bindings)
                inner[p.var] = v
                ids.append(self.enter(p.body, inner))
            if p.op == "|||":
                return self.par(frozenset(), ids) if ids else SKIP_ID
            if p.op == "[]":
                return self.ext(ids)
            if not ids:
                raise EvaluationError("internal choice over an empty set")
            return self.internal(ids)
        raise TypeError(f"not a process: {p!r}")

    def _event_set(self, e, bindings) -> frozenset:
        v = evaluate(e, bindings, self.env)
        if not isinstance(v, frozenset):
            raise EvaluationError(f"expected an event set, got {render_value(v)}")
        out = set()
        for x in v:
            if not isinstance(x, Event):
                raise EvaluationError(f"expected events, got {render_value(x)}")
            out.update(self.env.completions(x) if len(x) - 1 < len(self.env.signature(x.channel)) else (x,))
        return frozenset(out)

    # -- smart constructors

    def ext(self, ids) -> int:
        flat = set()
        for i in ids:
            c = self.configs[i]
            if c[0] == "ext":
                flat.update(c[1])
            elif i != STOP_ID:
                flat.add(i)
        if not flat:
            return STOP_ID
        if len(flat) == 1:
            return next(iter(flat))
        return self._intern(("ext", tuple(sorted(flat))))

    def internal(self, ids) -> int:
        uniq = tuple(sorted(set(ids)))
        if len(uniq) == 1:
            return uniq[0]
        return self._intern(("int", uniq))

    def par(self, sync: frozenset, ids) -> int:
        flat = []
        for i in ids:
            c = self.configs[i]
            if c[0] == "par" and c[1] == sync:
                flat.extend(c[2])
            else:
                flat.append(i)
        if len(flat) == 1:
            return flat[0]
        return self._intern(("par", sync, tuple(sorted(flat))))

    def hide(self, hidden: frozenset, i: int) -> int:
        if not hidden:
            return i
        c = self.configs[i]
        if c[0] == "hide":
            return self._intern(("hide", hidden | c[1], c[2]))
        if i in (STOP_ID, SKIP_ID, DIV_ID, OMEGA_ID):
            return i
        return self._intern(("hide", hidden, i))

    # -- transitions

    def transitions(self, i: int) -> list:
        """Sorted ``(label id, target id)`` pairs leaving configuration ``i``."""
        r = self._trans.get(i)
        if r is None:
            if not 0 <= i < len(self.configs):
                raise UnboundState(f"no configuration {i}")
            r = sorted(set(self._compute(self.configs[i])))
            self._trans[i] = r
        return r

    def _compute(self, c) -> list:
        kind = c[0]
        if kind == "prefix":
            return self._prefix(c[1], dict(c[2]))
        if kind in ("stop", "omega"):
            return []
        if kind == "skip":
            return [(TICK_LABEL, OMEGA_ID)]
        if kind == "div":
            return [(TAU_LABEL, DIV_ID)]
        if kind == "int":
            return [(TAU_LABEL, b) for b in c[1]]
        if kind == "ext":
            out = []
            branches = c[1]
            for k, b in enumerate(branches):
                for lab, tgt in self.transitions(b):
                    if lab == TAU_LABEL:
                        out.append((TAU_LABEL, self.ext(branches[:k] + (tgt,) + branches[k + 1:])))
                    else:
                        out.append((lab, tgt))
            return out
        if kind == "par":
            return self._par(c[1], c[2])
        if kind == "apar":
            return self._apar(*c[1:])
        if kind == "hide":
            hidden, inner = c[1], c[2]
            out = []
            for lab, tgt in self.transitions(inner):
                if lab == TICK_LABEL:
                    out.append((TICK_LABEL, OMEGA_ID))
                elif lab != TAU_LABEL and self.events[lab] in hidden:
                    out.append((TAU_LABEL, self.hide(hidden, tgt)))
                else:
                    out.append((lab, self.hide(hidden, tgt)))
            return out
        if kind == "seq":
            first, second, binds = c[1], c[2], c[3]
            out = []
            for lab, tgt in self.transitions(first):
                if lab == TICK_LABEL:
                    out.append((TAU_LABEL, self.enter(second, dict(binds))))
                else:
                    out.append((lab, self._intern(("seq", tgt, second, binds))))
            return out
        raise UnboundState(f"unknown configuration kind {kind}")

    def _prefix(self, p: Prefix, bindings: dict) -> list:
        head = evaluate(p.target, bindings, self.env)
        if not isinstance(head, Event):
            raise EvaluationError(f"prefix target is not a channel: {render_value(head)}")
        sig = self.env.signature(head.channel)
        out = []

        def go(k, event, binds):
            if k == len(p.fields):
                if len(event) - 1 != len(sig):
                    raise ArityMismatch(f"event {event} does not match channel {event.channel}")
                for dom, v in zip(sig, event.components):
                    if v not in dom:
                        raise AtomOutOfDomain(f"{render_value(v)} is not in {dom.name} (event {event})")
                out.append((self.label(event), self.enter(p.cont, binds)))
                return
            f = p.fields[k]
            pos = len(event) - 1
            if type(f) is Out:
                v = evaluate(f.value, binds, self.env)
                go(k + 1, event.extend(*v) if isinstance(v, Event) else event.extend(v), binds)
                return
            if pos >= len(sig):
                raise ArityMismatch(f"too many fields for channel {event.channel}")
            choices = sig[pos].atoms
            if f.restrict is not None:
                allowed = evaluate(f.restrict, binds, self.env)
                choices = [v for v in choices if v in allowed]
            for v in choices:
                inner = dict(binds)
                inner[f.name] = v
                go(k + 1, event.extend(v), inner)

        go(0, head, bindings)
        return out

    def _par(self, sync: frozenset, kids: tuple) -> list:
        out = []
        per_kid = [self.transitions(k) for k in kids]
        synced: dict = {}
        n = len(kids)
        for idx, trans in enumerate(per_kid):
            for lab, tgt in trans:
                if lab == TAU_LABEL:
                    out.append((TAU_LABEL, self.par(sync, kids[:idx] + (tgt,) + kids[idx + 1:])))
                elif lab == TICK_LABEL:
                    out.append((TAU_LABEL, self.par(sync, kids[:idx] + (OMEGA_ID,) + kids[idx + 1:])))
                elif self.events[lab] in sync:
                    synced.setdefault(lab, [[] for _ in range(n)])[idx].append(tgt)
                else:
                    out.append((lab, self.par(sync, kids[:idx] + (tgt,) + kids[idx + 1:])))
        for lab, options in synced.items():
            if all(options):
                for combo in itertools.product(*options):
                    out.append((lab, self.par(sync, combo)))
        if all(k == OMEGA_ID for k in kids):
            out.append((TICK_LABEL, OMEGA_ID))
        return out

    def _apar(self, a: frozenset, b: frozenset, left: int, right: int) -> list:
        out = []
        lt, rt = self.transitions(left), self.transitions(right)
        mk = lambda l, r: self._intern(("apar", a, b, l, r))
        rmap: dict = {}
        for lab, tgt in rt:
            if lab == TAU_LABEL:
                out.append((TAU_LABEL, mk(left, tgt)))
            elif lab == TICK_LABEL:
                out.append((TAU_LABEL, mk(left, OMEGA_ID)))
            else:
                e = self.events[lab]
                if e not in b:
                    continue
                if e in a:
                    rmap.setdefault(lab, []).append(tgt)
                else:
                    out.append((lab, mk(left, tgt)))
        for lab, tgt in lt:
            if lab == TAU_LABEL:
                out.append((TAU_LABEL, mk(tgt, right)))
            elif lab == TICK_LABEL:
                out.append((TAU_LABEL, mk(OMEGA_ID, right)))
            else:
                e = self.events[lab]
                if e not in a:
                    continue
                if e in b:
                    for r2 in rmap.get(lab, ()):
                        out.append((lab, mk(tgt, r2)))
                else:
                    out.append((lab, mk(tgt, right)))
        if left == OMEGA_ID and right == OMEGA_ID:
            out.append((TICK_LABEL, OMEGA_ID))
        return out

    # -- rendering

    def describe(self, i: int) -> str:
        c = self.configs[i]
        kind = c[0]
        if kind in ("stop", "skip", "div"):
            return kind.upper()
        if kind == "omega":
            return "Ω"
        if kind == "prefix":
            from .cspm import format_expr

            text = format_expr(c[1])
            if c[2]:
                text += " with " + ", ".join(f"{k}={render_value(v)}" for k, v in c[2])
            return text
        if kind == "ext":
            return "(" + " [] ".join(self.describe(b) for b in c[1]) + ")"
        if kind == "int":
            return "(" + " |~| ".join(self.describe(b) for b in c[1]) + ")"
        if kind == "par":
            op = " ||| " if not c[1] else f" [|{len(c[1])} events|] "
            return "(" + op.join(self.describe(b) for b in c[2]) + ")"
        if kind == "apar":
            return f"({self.describe(c[3])} [A||B] {self.describe(c[4])})"
        if kind == "hide":
            return f"({self.describe(c[2])} \\ {len(c[1])} events)"
        if kind == "seq":
            from .cspm import format_expr

            return f"({self.describe(c[1])} ; {format_expr(c[2])})"
        return repr(c)


def _restrict(p: Proc, bindings: Mapping) -> tuple:
    fv = free_names(p)
    return tuple(sorted(((k, v) for k, v in bindings.items() if k in fv), key=lambda kv: kv[0]))


def _truth(v) -> bool:
    if not isinstance(v, bool):
        raise EvaluationError(f"condition is not boolean: {render_value(v)}")
    return v


def _sort_key(v):
    return (type(v).__name__, render_value(v))


# ---------------------------------------------------------------- state refs


@dataclass(frozen=True)
class StateRef:
    """A configuration registered in a :class:`Semantics` table."""

    semantics: Semantics
    index: int

    def __hash__(self):
        return hash((id(self.semantics), self.index))

    def __eq__(self, other):
        return isinstance(other, StateRef) and other.semantics is self.semantics and other.index == self.index

    def __str__(self):
        return self.semantics.describe(self.index)


def initial_state(env: Environment, expr: Proc, semantics: Semantics | None = None) -> StateRef:
    validate(env, expr)
    sem = semantics if semantics is not None else Semantics(env)
    return StateRef(sem, sem.enter(expr, {}))


def transitions(s: StateRef) -> list:
    """Outgoing ``(Event, StateRef)`` pairs, sorted by event then target."""
    sem = s.semantics
    out = [(sem.events[lab], StateRef(sem, tgt)) for lab, tgt in sem.transitions(s.index)]
    out.sort(key=lambda et: (et[0], et[1].index))
    return out


# ---------------------------------------------------------------- LTS


class LTS:
    """An explored transition system in compressed-row form.

    ``events[0]`` is τ and ``events[1]`` is ✓; visible events follow in sorted
    order.  Edges of state ``s`` are ``labels[offsets[s]:offsets[s+1]]`` and the
    matching ``targets`` slice, sorted by label then target.  The root is
    always state 0 and states are numbered in breadth-first discovery order.
    """

    def __init__(self, events, offsets, labels, targets, names=None):
        self.events = list(events)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int32)
        self.targets = np.asarray(targets, dtype=np.int32)
        self.names = names
        self.root = 0
        self.divergent: np.ndarray | None = None
        self._event_index = None

    @property
    def num_states(self) -> int:
        return len(self.offsets) - 1

    @property
    def num_edges(self) -> int:
        return len(self.labels)

    def event_index(self, e: Event) -> int:
        if self._event_index is None:
            self._event_index = {ev: i for i, ev in enumerate(self.events)}
        return self._event_index.get(e, -1)

    @property
    def visible_events(self) -> list:
        return self.events[2:]

    def successors(self, s: int) -> list:
        if not 0 <= s < self.num_states:
            raise UnboundState(f"no state {s}")
        lo, hi = self.offsets[s], self.offsets[s + 1]
        return [(self.events[l], int(t)) for l, t in zip(self.labels[lo:hi], self.targets[lo:hi])]

    def edges(self, s: int):
        lo, hi = int(self.offsets[s]), int(self.offsets[s + 1])
        return self.labels[lo:hi], self.targets[lo:hi]

    def is_deadlocked(self, s: int) -> bool:
        return self.offsets[s] == self.offsets[s + 1]

    def is_terminal(self, s: int) -> bool:
        """Only ✓ enabled (successful termination pending)."""
        labs, _ = self.edges(s)
        return len(labs) > 0 and bool(np.all(labs == TICK_LABEL))

    def describe(self, s: int) -> str:
        if self.names is not None:
            return self.names(s)
        return f"state {s}"

    def dump(self) -> str:
        """Line-oriented ``src label dst`` text, one line per edge."""
        lines = []
        for s in range(self.num_states):
            for e, t in self.successors(s):
                lines.append(f"{s} {e} {t}")
        return "\n".join(lines) + ("\n" if lines else "")

    def hide(self, events: Iterable[Event]) -> "LTS":
        """Relabel ``events`` to τ; states and numbering are kept."""
        hidden = {self.event_index(e) for e in events} - {-1}
        keep = [i for i in range(2, len(self.events)) if i not in hidden]
        new_events = [TAU, TICK] + [self.events[i] for i in keep]
        remap = np.zeros(len(self.events), dtype=np.int32)
        remap[1] = TICK_LABEL
        for new, old in enumerate(keep, start=2):
            remap[old] = new
        labels = remap[self.labels]
        return _sorted_lts(new_events, self.offsets, labels, self.targets, self.names)

    def __eq__(self, other):
        return (
            isinstance(other, LTS)
            and self.events == other.events
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.targets, other.targets)
        )

    def __repr__(self):
        return f"LTS({self.num_states} states, {self.num_edges} edges, {len(self.events) - 2} events)"


def _sorted_lts(events, offsets, labels, targets, names=None) -> LTS:
    """Sort and deduplicate each state's edges by (label, target)."""
    n = len(offsets) - 1
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(offsets))
    order = np.lexsort((targets, labels, src))
    src, labels, targets = src[order], labels[order], targets[order]
    if len(src):
        keep = np.ones(len(src), dtype=bool)
        keep[1:] = (src[1:] != src[:-1]) | (labels[1:] != labels[:-1]) | (targets[1:] != targets[:-1])
        src, labels, targets = src[keep], labels[keep], targets[keep]
    counts = np.bincount(src, minlength=n)
    new_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=new_offsets[1:])
    return LTS(events, new_offsets, labels, targets, names)


def build_lts(num_states: int, edges, events, names=None) -> LTS:
    """Assemble an LTS from ``(src, label, dst)`` triples over ``events``.

    Visible labels are renumbered so that ``events[2:]`` ends up sorted;
    events that label no edge are dropped.
    """
    events = list(events)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    present = set(np.unique(e[:, 1]).tolist())
    visible = sorted((i for i in range(2, len(events)) if i in present), key=lambda i: events[i])
    remap = np.zeros(len(events), dtype=np.int32)
    remap[1] = TICK_LABEL
    for new, old in enumerate(visible, start=2):
        remap[old] = new
    new_events = [TAU, TICK] + [events[i] for i in visible]
    src, labs, dst = e[:, 0], remap[e[:, 1]] if len(e) else e[:, 1].astype(np.int32), e[:, 2]
    counts = np.bincount(src, minlength=num_states)
    offsets = np.zeros(num_states + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    order = np.argsort(src, kind="stable")
    return _sorted_lts(new_events, offsets, labs[order], dst[order], names)


# ---------------------------------------------------------------- exploration


def explore(env: Environment, expr: Proc, state_bound: int = DEFAULT_STATE_BOUND, *, check: bool = True) -> LTS:
    """Breadth-first closure of the transitions of ``expr``.

    Raises :class:`BoundExceeded` rather than returning a truncated system.
    Systems whose top level contains parallel composition are compiled into
    a flat synchronisation table first (see :mod:`refine_pj.engine`); both
    paths yield identical LTSs.
    """
    if state_bound <= 0:
        raise ValueError("state_bound must be positive")
    if check:
        validate(env, expr)
    from .engine import explore_compiled

    lts = explore_compiled(env, expr, state_bound)
    if lts is not None:
        return lts
    return explore_generic(env, expr, state_bound, check=False)


def explore_generic(env: Environment, expr: Proc, state_bound: int = DEFAULT_STATE_BOUND, *, check: bool = True) -> LTS:
    if check:
        validate(env, expr)
    sem = Semantics(env)
    root = sem.enter(expr, {})
    return lts_from_semantics(sem, root, state_bound)


def lts_from_semantics(sem: Semantics, root: int, state_bound: int = DEFAULT_STATE_BOUND) -> LTS:
    number = {root: 0}
    order = [root]
    edges = []
    queue = deque([root])
    while queue:
        c = queue.popleft()
        s = number[c]
        for lab, tgt in sem.transitions(c):
            t = number.get(tgt)
            if t is None:
                if len(order) >= state_bound:
                    raise BoundExceeded(len(order) + 1, state_bound)
                t = number[tgt] = len(order)
                order.append(tgt)
                queue.append(tgt)
            edges.append((s, lab, t))
    return build_lts(len(order), edges, sem.events, names=lambda s: sem.describe(order[s]))


def tau_closure(lts: LTS, s: int) -> set:
    """States reachable from ``s`` by zero or more τ edges."""
    seen = {s}
    stack = [s]
    while stack:
        u = stack.pop()
        labs, tgts = lts.edges(u)
        for l, t in zip(labs, tgts):
            if l == TAU_LABEL and int(t) not in seen:
                seen.add(int(t))
                stack.append(int(t))
    return seen


def traces_upto(lts: LTS, depth: int, *, with_tick: bool = False) -> set:
    """Visible traces of length ``<= depth`` (✓ appended when ``with_tick``)."""
    out = {()}
    frontier = {(): frozenset(tau_closure(lts, lts.root))}
    for _ in range(depth):
        nxt: dict = {}
        for tr, states in frontier.items():
            for u in states:
                labs, tgts = lts.edges(u)
                for l, t in zip(labs, tgts):
                    if l == TAU_LABEL:
                        continue
                    e = lts.events[l]
                    if l == TICK_LABEL:
                        if with_tick:
                            out.add(tr + (e,))
                        continue
                    nxt.setdefault(tr + (e,), set()).update(tau_closure(lts, int(t)))
        frontier = {k: frozenset(v) for k, v in nxt.items()}
        out.update(frontier)
        if not frontier:
            break
    return out
