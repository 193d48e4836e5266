"""Events, value domains, the process-expression AST and the definition environment.

Values that flow through models are plain Python objects: datatype atoms are
``str``, booleans are ``bool``, numbers are ``int``, sequences are ``tuple`` and
sets are ``frozenset``.  A (possibly partial) dotted event such as
``ready.P1`` is an :class:`Event`, which doubles as a channel reference.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, fields
from typing import Any, Iterable, Mapping

from .errors import (
    ArityMismatch,
    AtomOutOfDomain,
    DomainError,
    EvaluationError,
    UnguardedRecursion,
    UnknownChannel,
    UnknownDefinition,
    UnknownName,
    ValidationError,
)

# ---------------------------------------------------------------- events


def render_value(v) -> str:
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, Event):
        return str(v)
    if isinstance(v, tuple):
        return "<" + ", ".join(render_value(x) for x in v) + ">"
    if isinstance(v, frozenset):
        return "{" + ", ".join(sorted(render_value(x) for x in v)) + "}"
    return str(v)


class Event(tuple):
    """A channel name followed by its value components.

    Structural equality and lexicographic order come from ``tuple``.  The
    internal action and successful termination are the reserved channels
    ``τ`` and ``✓``, which can never be written in source text.
    """

    __slots__ = ()

    def __new__(cls, channel: str, *components):
        return tuple.__new__(cls, (channel,) + components)

    @property
    def channel(self) -> str:
        return self[0]

    @property
    def components(self) -> tuple:
        return tuple(self[1:])

    @property
    def kind(self) -> str:
        if self is TAU or self == TAU:
            return "tau"
        if self == TICK:
            return "tick"
        return "visible"

    def extend(self, *more) -> "Event":
        return Event(*self, *more)

    def __str__(self):
        return ".".join(render_value(x) for x in self)

    def __repr__(self):
        return f"Event({str(self)!r})"

    def __reduce__(self):
        return (Event, tuple(self))


TAU = Event("τ")
TICK = Event("✓")


def is_visible(e: Event) -> bool:
    return e != TAU and e != TICK


# ---------------------------------------------------------------- domains


@dataclass(frozen=True)
class ValueDomain:
    """A finite enumeration with optional named subsets (CSP subtypes)."""

    name: str
    atoms: tuple
    subdomains: tuple = ()  # ((name, atoms), ...)

    def __post_init__(self):
        if not self.atoms:
            raise DomainError(f"domain {self.name} is empty")
        if len(set(self.atoms)) != len(self.atoms):
            raise DomainError(f"domain {self.name} has duplicate atoms")
        kinds = {_value_kind(a) for a in self.atoms}
        if len(kinds) != 1:
            raise DomainError(f"domain {self.name} mixes value kinds")
        for sub, atoms in self.subdomains:
            missing = set(atoms) - set(self.atoms)
            if missing:
                raise DomainError(f"subtype {sub} is not a subset of {self.name}: {sorted(map(str, missing))}")

    def __contains__(self, value):
        return value in self.atoms

    def subdomain(self, name: str) -> "ValueDomain":
        for sub, atoms in self.subdomains:
            if sub == name:
                return ValueDomain(sub, tuple(atoms))
        raise KeyError(name)


def _value_kind(v):
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    return type(v).__name__


BOOL = ValueDomain("Bool", (False, True))
_RANGE = re.compile(r"^\{(-?\d+)\.\.(-?\d+)\}$")


def range_domain_name(lo: int, hi: int) -> str:
    return "{%d..%d}" % (lo, hi)


# ---------------------------------------------------------------- AST plumbing


def _cached_hash(self):
    h = self.__dict__.get("_h")
    if h is None:
        h = hash((type(self).__name__,) + tuple(getattr(self, f.name) for f in fields(self)))
        object.__setattr__(self, "_h", h)
    return h


def node(cls):
    """Frozen dataclass whose hash is computed once; AST trees can be deep."""
    cls = dataclass(frozen=True)(cls)
    cls.__hash__ = _cached_hash
    return cls


class Expr:
    """Value-level expression."""


class Proc:
    """Process expression."""


# value expressions


@node
class Const(Expr):
    value: Any


@node
class Name(Expr):
    ident: str


@node
class Dot(Expr):
    parts: tuple


@node
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@node
class UnOp(Expr):
    op: str
    operand: Expr


@node
class Func(Expr):
    name: str
    args: tuple


@node
class SeqLit(Expr):
    items: tuple


@node
class SetLit(Expr):
    items: tuple


@node
class RangeSet(Expr):
    lo: Expr
    hi: Expr


@node
class Productions(Expr):
    """``{| c, d.x |}``: every completion of the listed partial events."""

    items: tuple


FUNCTIONS = {
    "head": 1,
    "tail": 1,
    "union": 2,
    "inter": 2,
    "diff": 2,
    "member": 2,
    "card": 1,
    "set": 1,
    "elem": 2,
    "length": 1,
}

# event fields


@node
class Out:
    value: Expr
    bang: bool = True  # '!' when True, '.' otherwise


@node
class In:
    name: str
    restrict: Expr | None = None


# process expressions


@node
class Stop(Proc):
    pass


@node
class Skip(Proc):
    pass


@node
class Div(Proc):
    pass


@node
class Prefix(Proc):
    target: Expr
    fields: tuple
    cont: Proc


@node
class ExtChoice(Proc):
    branches: tuple


@node
class IntChoice(Proc):
    branches: tuple


@node
class Guard(Proc):
    cond: Expr
    proc: Proc


@node
class GenParallel(Proc):
    left: Proc
    right: Proc
    sync: Expr


@node
class AlphaParallel(Proc):
    left: Proc
    alpha_left: Expr
    alpha_right: Expr
    right: Proc


@node
class Interleave(Proc):
    procs: tuple


@node
class Hide(Proc):
    proc: Proc
    hidden: Expr


@node
class Seq(Proc):
    first: Proc
    second: Proc


@node
class Call(Proc):
    name: str
    args: tuple = ()


@node
class IfThenElse(Proc):
    cond: Expr
    then: Proc
    orelse: Proc = Skip()


@node
class Replicated(Proc):
    op: str  # '|||', '[]' or '|~|'
    var: str
    over: Expr
    body: Proc


REPLICATED_OPS = ("|||", "[]", "|~|")

STOP = Stop()
SKIP = Skip()
DIV = Div()


@dataclass(frozen=True)
class Definition:
    name: str
    params: tuple
    body: Proc


# ---------------------------------------------------------------- environment


@dataclass
class Environment:
    """Datatypes, channels and process definitions of one model.

    ``definitions`` is keyed by ``(name, arity)``.  Accessors that iterate
    return items sorted by name so every consumer is reproducible.
    """

    domains: dict = field(default_factory=dict)
    channels: dict = field(default_factory=dict)
    definitions: dict = field(default_factory=dict)

    # -- construction

    def datatype(self, name: str, atoms: Iterable) -> ValueDomain:
        atoms = tuple(atoms)
        for a in atoms:
            other = self.atom_type(a)
            if other is not None:
                raise DomainError(f"atom {render_value(a)} already belongs to {other}")
        dom = ValueDomain(name, atoms)
        self._check_fresh(name)
        self.domains[name] = dom
        self._atoms = None
        return dom

    def subtype(self, name: str, atoms: Iterable) -> ValueDomain:
        atoms = tuple(atoms)
        self._check_fresh(name)
        parents = [d for d in self.domains.values() if set(atoms) <= set(d.atoms)]
        if not parents:
            raise DomainError(f"subtype {name} is not contained in any datatype")
        parent = parents[0]
        self.domains[parent.name] = ValueDomain(parent.name, parent.atoms, parent.subdomains + ((name, atoms),))
        return ValueDomain(name, atoms)

    def channel(self, *names: str, signature: Iterable[str] = ()) -> None:
        signature = tuple(signature)
        for d in signature:
            self.domain(d)
        for n in names:
            if n in self.channels:
                raise ValidationError(f"channel {n} declared twice")
            self.channels[n] = signature

    def define(self, name: str, params: Iterable[str], body: Proc) -> Call:
        params = tuple(params)
        self.definitions[(name, len(params))] = Definition(name, params, body)
        return Call(name, tuple(Name(p) for p in params))

    def _check_fresh(self, name):
        if name in self.domains or any(name == s for d in self.domains.values() for s, _ in d.subdomains):
            raise DomainError(f"domain {name} declared twice")

    # -- lookup

    def domain(self, name: str) -> ValueDomain:
        d = self.domains.get(name)
        if d is not None:
            return d
        for d in self.domains.values():
            for sub, atoms in d.subdomains:
                if sub == name:
                    return ValueDomain(sub, tuple(atoms))
        if name == "Bool":
            return BOOL
        m = _RANGE.match(name)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise DomainError(f"empty range domain {name}")
            return ValueDomain(name, tuple(range(lo, hi + 1)))
        raise UnknownName(f"unknown domain {name}")

    def has_domain(self, name: str) -> bool:
        try:
            self.domain(name)
        except UnknownName:
            return False
        return True

    def atom_type(self, atom):
        if self.__dict__.get("_atoms") is None:
            self._atoms = {a: d.name for d in self.domains.values() for a in d.atoms}
        return self._atoms.get(atom)

    def signature(self, channel: str) -> tuple:
        try:
            sig = self.channels[channel]
        except KeyError:
            raise UnknownChannel(f"unknown channel {channel}") from None
        cache = self.__dict__.setdefault("_sigs", {})
        doms = cache.get(channel)
        if doms is None or len(doms) != len(sig):
            doms = cache[channel] = tuple(self.domain(d) for d in sig)
        return doms

    def completions(self, partial: Event) -> list:
        """All full events extending ``partial`` (checked against the signature)."""
        sig = self.signature(partial.channel)
        have = partial.components
        if len(have) > len(sig):
            raise ArityMismatch(f"{partial} has more components than channel {partial.channel}")
        for dom, v in zip(sig, have):
            if v not in dom:
                raise AtomOutOfDomain(f"{render_value(v)} is not in {dom.name} (event {partial})")
        rest = [d.atoms for d in sig[len(have):]]
        return [partial.extend(*combo) for combo in itertools.product(*rest)]

    def events_of(self, channel: str) -> list:
        return self.completions(Event(channel))

    def all_events(self) -> list:
        return sorted(e for c in sorted(self.channels) for e in self.events_of(c))

    def lookup(self, name: str, arity: int) -> Definition:
        d = self.definitions.get((name, arity))
        if d is None:
            if any(n == name for n, _ in self.definitions):
                raise ArityMismatch(f"{name} is not defined with {arity} parameters")
            raise UnknownDefinition(f"undefined process {name}")
        return d

    def sorted_definitions(self) -> list:
        return [self.definitions[k] for k in sorted(self.definitions)]

    def copy(self) -> "Environment":
        return Environment(dict(self.domains), dict(self.channels), dict(self.definitions))

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return (self.domains, self.channels, self.definitions) == (other.domains, other.channels, other.definitions)


# ---------------------------------------------------------------- evaluation


def evaluate(expr: Expr, bindings: Mapping, env: Environment):
    """Evaluate a value expression under variable ``bindings``."""
    t = type(expr)
    if t is Const:
        return expr.value
    if t is Name:
        return _resolve_name(expr.ident, bindings, env)
    if t is Dot:
        head = evaluate(expr.parts[0], bindings, env)
        if not isinstance(head, Event):
            raise EvaluationError(f"dotted value must start with a channel, got {render_value(head)}")
        rest = []
        for p in expr.parts[1:]:
            v = evaluate(p, bindings, env)
            if isinstance(v, Event):
                rest.extend(v)
            else:
                rest.append(v)
        return head.extend(*rest)
    if t is BinOp:
        return _binop(expr, bindings, env)
    if t is UnOp:
        v = evaluate(expr.operand, bindings, env)
        if expr.op == "not":
            return not _bool(v)
        if expr.op == "#":
            return len(_seq(v))
        if expr.op == "-":
            return -_int(v)
        raise EvaluationError(f"unknown operator {expr.op}")
    if t is Func:
        return _func(expr, bindings, env)
    if t is SeqLit:
        return tuple(evaluate(i, bindings, env) for i in expr.items)
    if t is SetLit:
        return frozenset(evaluate(i, bindings, env) for i in expr.items)
    if t is RangeSet:
        return frozenset(range(_int(evaluate(expr.lo, bindings, env)), _int(evaluate(expr.hi, bindings, env)) + 1))
    if t is Productions:
        out = set()
        for item in expr.items:
            v = evaluate(item, bindings, env)
            if not isinstance(v, Event):
                raise EvaluationError(f"{{| |}} expects channels, got {render_value(v)}")
            out.update(env.completions(v))
        return frozenset(out)
    raise EvaluationError(f"cannot evaluate {expr!r}")


def _resolve_name(ident, bindings, env):
    if ident in bindings:
        return bindings[ident]
    if env.atom_type(ident) is not None:
        return ident
    if ident in env.channels:
        return Event(ident)
    if env.has_domain(ident):
        return frozenset(env.domain(ident).atoms)
    raise UnknownName(f"unknown name {ident}")


def _bool(v):
    if not isinstance(v, bool):
        raise EvaluationError(f"expected a boolean, got {render_value(v)}")
    return v


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise EvaluationError(f"expected an integer, got {render_value(v)}")
    return v


def _seq(v):
    if not isinstance(v, tuple) or isinstance(v, Event):
        raise EvaluationError(f"expected a sequence, got {render_value(v)}")
    return v


def _set(v):
    if not isinstance(v, frozenset):
        raise EvaluationError(f"expected a set, got {render_value(v)}")
    return v


def _binop(expr, bindings, env):
    op = expr.op
    if op == "and":
        return _bool(evaluate(expr.left, bindings, env)) and _bool(evaluate(expr.right, bindings, env))
    if op == "or":
        return _bool(evaluate(expr.left, bindings, env)) or _bool(evaluate(expr.right, bindings, env))
    a = evaluate(expr.left, bindings, env)
    b = evaluate(expr.right, bindings, env)
    if op == "==":
        return a == b and type(a) is type(b)
    if op == "!=":
        return not (a == b and type(a) is type(b))
    if op == "^":
        return _seq(a) + _seq(b)
    if op == "+":
        return _int(a) + _int(b)
    if op == "-":
        return _int(a) - _int(b)
    if op in ("<", "<=", ">", ">="):
        a, b = _int(a), _int(b)
        return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]
    raise EvaluationError(f"unknown operator {op}")


def _func(expr, bindings, env):
    args = [evaluate(a, bindings, env) for a in expr.args]
    name = expr.name
    if name == "head":
        s = _seq(args[0])
        if not s:
            raise EvaluationError("head of empty sequence")
        return s[0]
    if name == "tail":
        s = _seq(args[0])
        if not s:
            raise EvaluationError("tail of empty sequence")
        return s[1:]
    if name == "length":
        return len(_seq(args[0]))
    if name == "union":
        return _set(args[0]) | _set(args[1])
    if name == "inter":
        return _set(args[0]) & _set(args[1])
    if name == "diff":
        return _set(args[0]) - _set(args[1])
    if name == "member":
        return args[0] in _set(args[1])
    if name == "card":
        return len(_set(args[0]))
    if name == "set":
        return frozenset(_seq(args[0]))
    if name == "elem":
        return args[0] in _seq(args[1])
    raise EvaluationError(f"unknown function {name}")


# ---------------------------------------------------------------- free names


def free_names(n) -> frozenset:
    """Names occurring free in an expression, field list or process.

    Atoms and channel names are included; callers intersect with the bound
    variables they actually hold.
    """
    cached = n.__dict__.get("_fv") if hasattr(n, "__dict__") else None
    if cached is not None:
        return cached
    fv = _free_names(n)
    object.__setattr__(n, "_fv", fv)
    return fv


def _free_names(n) -> frozenset:
    t = type(n)
    if t is Name:
        return frozenset((n.ident,))
    if t is Const or t in (Stop, Skip, Div):
        return frozenset()
    if t is Dot:
        return _union(free_names(p) for p in n.parts)
    if t is BinOp:
        return free_names(n.left) | free_names(n.right)
    if t is UnOp:
        return free_names(n.operand)
    if t in (Func, Call):
        return _union(free_names(a) for a in n.args)
    if t in (SeqLit, SetLit, Productions):
        return _union(free_names(i) for i in n.items)
    if t is RangeSet:
        return free_names(n.lo) | free_names(n.hi)
    if t is Prefix:
        used = set(free_names(n.target))
        bound = set()
        for f in n.fields:
            if type(f) is Out:
                used |= free_names(f.value) - bound
            else:
                if f.restrict is not None:
                    used |= free_names(f.restrict) - bound
                bound.add(f.name)
        used |= free_names(n.cont) - bound
        return frozenset(used)
    if t in (ExtChoice, IntChoice):
        return _union(free_names(b) for b in n.branches)
    if t is Interleave:
        return _union(free_names(p) for p in n.procs)
    if t is Guard:
        return free_names(n.cond) | free_names(n.proc)
    if t is GenParallel:
        return free_names(n.left) | free_names(n.right) | free_names(n.sync)
    if t is AlphaParallel:
        return free_names(n.left) | free_names(n.right) | free_names(n.alpha_left) | free_names(n.alpha_right)
    if t is Hide:
        return free_names(n.proc) | free_names(n.hidden)
    if t is Seq:
        return free_names(n.first) | free_names(n.second)
    if t is IfThenElse:
        return free_names(n.cond) | free_names(n.then) | free_names(n.orelse)
    if t is Replicated:
        return free_names(n.over) | (free_names(n.body) - {n.var})
    raise TypeError(f"not an AST node: {n!r}")


def _union(sets) -> frozenset:
    out = set()
    for s in sets:
        out |= s
    return frozenset(out)


# ---------------------------------------------------------------- events


def make_event(env: Environment, channel: str, components: Iterable = ()) -> Event:
    """Build a complete visible event, checking arity and component domains."""
    components = tuple(components)
    sig = env.signature(channel)
    if len(components) != len(sig):
        raise ArityMismatch(f"channel {channel} takes {len(sig)} components, got {len(components)}")
    for dom, v in zip(sig, components):
        if v not in dom or _value_kind(v) != _value_kind(dom.atoms[0]):
            raise AtomOutOfDomain(f"{render_value(v)} is not in {dom.name} (channel {channel})")
    return Event(channel, *components)


def parse_event(env: Environment, text: str) -> Event:
    """Inverse of ``str(event)`` for events of ``env``."""
    parts = text.split(".")
    channel = parts[0]
    sig = env.signature(channel)
    comps = []
    for dom, raw in zip(sig, parts[1:]):
        comps.append(_parse_atom(dom, raw))
    if len(parts) - 1 != len(sig):
        raise ArityMismatch(f"channel {channel} takes {len(sig)} components, got {len(parts) - 1}")
    return make_event(env, channel, comps)


def _parse_atom(dom: ValueDomain, raw: str):
    for a in dom.atoms:
        if render_value(a) == raw:
            return a
    raise AtomOutOfDomain(f"{raw} is not in {dom.name}")


# ---------------------------------------------------------------- validation

_BUILTIN_NAMES = frozenset(("Bool",))


def validate(env: Environment, root: Proc | None = None) -> None:
    """Check closure, arity, static domains and guarded recursion.

    Raises the first problem found; every error names the definition it was
    found in (``<root>`` for the root expression).
    """
    for d in env.domains.values():
        for sub, atoms in d.subdomains:
            if not set(atoms) <= set(d.atoms):
                raise DomainError(f"subtype {sub} escapes {d.name}")
    for name, sig in sorted(env.channels.items()):
        for dname in sig:
            try:
                env.domain(dname)
            except UnknownName:
                raise UnknownName(f"channel {name} uses unknown domain {dname}") from None
    checker = _Checker(env)
    for d in env.sorted_definitions():
        if len(set(d.params)) != len(d.params):
            raise ValidationError("repeated parameter", d.name)
        checker.proc(d.body, frozenset(d.params), d.name)
    if root is not None:
        checker.proc(root, frozenset(), "<root>")
    _check_guarded(env)


class _Checker:
    def __init__(self, env):
        self.env = env

    def proc(self, p, scope, where):
        t = type(p)
        if t in (Stop, Skip, Div):
            return
        if t is Prefix:
            self._prefix(p, scope, where)
        elif t in (ExtChoice, IntChoice):
            for b in p.branches:
                self.proc(b, scope, where)
        elif t is Interleave:
            for b in p.procs:
                self.proc(b, scope, where)
        elif t is Guard:
            self.expr(p.cond, scope, where)
            self.proc(p.proc, scope, where)
        elif t is GenParallel:
            self.expr(p.sync, scope, where)
            self.proc(p.left, scope, where)
            self.proc(p.right, scope, where)
        elif t is AlphaParallel:
            self.expr(p.alpha_left, scope, where)
            self.expr(p.alpha_right, scope, where)
            self.proc(p.left, scope, where)
            self.proc(p.right, scope, where)
        elif t is Hide:
            self.expr(p.hidden, scope, where)
            self.proc(p.proc, scope, where)
        elif t is Seq:
            self.proc(p.first, scope, where)
            self.proc(p.second, scope, where)
        elif t is Call:
            try:
                self.env.lookup(p.name, len(p.args))
            except (UnknownDefinition, ArityMismatch) as exc:
                raise type(exc)(str(exc), where) from None
            for a in p.args:
                self.expr(a, scope, where)
        elif t is IfThenElse:
            self.expr(p.cond, scope, where)
            self.proc(p.then, scope, where)
            self.proc(p.orelse, scope, where)
        elif t is Replicated:
            if p.op not in REPLICATED_OPS:
                raise ValidationError(f"unknown replicated operator {p.op}", where)
            self.expr(p.over, scope, where)
            self.proc(p.body, scope | {p.var}, where)
        else:
            raise ValidationError(f"not a process: {p!r}", where)

    def expr(self, e, scope, where):
        for n in free_names(e):
            if n in scope or n in _BUILTIN_NAMES:
                continue
            if self.env.atom_type(n) is None and n not in self.env.channels and not self.env.has_domain(n):
                raise UnknownName(f"unknown name {n}", where)
        if type(e) is Const and isinstance(e.value, Event):
            self._static_event(list(e.value), where)
        for sub in _subexprs(e):
            if type(sub) is Func and FUNCTIONS.get(sub.name) != len(sub.args):
                raise ArityMismatch(f"function {sub.name} called with {len(sub.args)} arguments", where)

    def _prefix(self, p, scope, where):
        self.expr(p.target, scope, where)
        parts = p.target.parts if type(p.target) is Dot else (p.target,)
        head = parts[0]
        static = None
        if type(head) is Name and head.ident not in scope:
            if head.ident not in self.env.channels:
                raise UnknownChannel(f"unknown channel {head.ident}", where)
            static = [head.ident]
            for q in parts[1:]:
                v = self._static_value(q, scope)
                static.append(v)
        inner = set(scope)
        for f in p.fields:
            if type(f) is Out:
                self.expr(f.value, frozenset(inner), where)
                if static is not None:
                    static.append(self._static_value(f.value, inner))
            else:
                if f.restrict is not None:
                    self.expr(f.restrict, frozenset(inner), where)
                inner.add(f.name)
                if static is not None:
                    static.append(_DYNAMIC)
        if static is not None:
            sig = self.env.signature(static[0])
            if len(static) - 1 != len(sig) and _DYNAMIC_EVENT not in static:
                raise ArityMismatch(f"channel {static[0]} takes {len(sig)} components, got {len(static) - 1}", where)
            self._static_event(static, where)
        self.proc(p.cont, frozenset(inner), where)

    def _static_value(self, e, scope):
        if type(e) is Const:
            return _DYNAMIC_EVENT if isinstance(e.value, Event) else e.value
        if type(e) is Name and e.ident not in scope and self.env.atom_type(e.ident) is not None:
            return e.ident
        return _DYNAMIC

    def _static_event(self, parts, where):
        sig = self.env.signature(parts[0])
        if _DYNAMIC_EVENT in parts:
            return
        for dom, v in zip(sig, parts[1:]):
            if v is _DYNAMIC:
                continue
            if v not in dom:
                raise AtomOutOfDomain(f"{render_value(v)} is not in {dom.name} (channel {parts[0]})", where)


_DYNAMIC = object()
_DYNAMIC_EVENT = object()


def _subexprs(e):
    yield e
    t = type(e)
    if t is Dot:
        children = e.parts
    elif t is BinOp:
        children = (e.left, e.right)
    elif t is UnOp:
        children = (e.operand,)
    elif t is Func:
        children = e.args
    elif t in (SeqLit, SetLit, Productions):
        children = e.items
    elif t is RangeSet:
        children = (e.lo, e.hi)
    else:
        children = ()
    for c in children:
        yield from _subexprs(c)


def unguarded_calls(p) -> set:
    """Definition names reachable from ``p`` without passing a prefix.

    The second half of a sequential composition counts as guarded: it is only
    entered after the first half terminates.
    """
    out = set()
    stack = [p]
    while stack:
        q = stack.pop()
        t = type(q)
        if t is Call:
            out.add((q.name, len(q.args)))
        elif t in (ExtChoice, IntChoice):
            stack.extend(q.branches)
        elif t is Interleave:
            stack.extend(q.procs)
        elif t is Guard:
            stack.append(q.proc)
        elif t in (GenParallel, AlphaParallel):
            stack.extend((q.left, q.right))
        elif t is Hide:
            stack.append(q.proc)
        elif t is Seq:
            stack.append(q.first)
        elif t is IfThenElse:
            stack.extend((q.then, q.orelse))
        elif t is Replicated:
            stack.append(q.body)
    return out


def _check_guarded(env):
    graph = {k: sorted(unguarded_calls(d.body)) for k, d in env.definitions.items()}
    colour = {}
    path = []

    def visit(k):
        colour[k] = 1
        path.append(k)
        for m in graph.get(k, ()):
            if colour.get(m) == 1:
                cycle = path[path.index(m):] + [m]
                raise UnguardedRecursion([n for n, _ in cycle])
            if m not in colour:
                visit(m)
        path.pop()
        colour[k] = 2

    for k in sorted(graph):
        if k not in colour:
            visit(k)


# ---------------------------------------------------------------- alphabets

_TOP = object()
_MAX_COMBOS = 4096
_MAX_KEYS_PER_DEF = 32


def alphabet_of(expr: Proc, env: Environment, bindings: Mapping | None = None) -> frozenset:
    """Visible events ``expr`` could ever perform.

    A syntactic over-approximation: guards are ignored, both branches of every
    conditional are taken, and sequence-valued parameters are widened to
    "unknown", which makes any event component computed from them range over
    its whole domain.
    """
    validate(env, None)
    _Checker(env).proc(expr, frozenset(bindings or ()), "<root>")
    walker = _AlphabetWalker(env)
    aenv = {k: frozenset((v,)) for k, v in (bindings or {}).items()}
    while True:
        walker.changed = False
        walker.done = set()
        result = walker.proc(expr, aenv)
        if not walker.changed:
            return frozenset(result)


class _AlphabetWalker:
    def __init__(self, env):
        self.env = env
        self.memo = {}
        self.active = set()
        self.done = set()
        self.keys_per_def = {}
        self.changed = False

    def value(self, e, aenv):
        names = [n for n in free_names(e) if n in aenv]
        pools = []
        for n in names:
            v = aenv[n]
            if v is _TOP:
                return _TOP
            pools.append(sorted(v, key=repr))
        combos = 1
        for p in pools:
            combos *= max(len(p), 1)
        if combos > _MAX_COMBOS:
            return _TOP
        out = set()
        for combo in itertools.product(*pools):
            try:
                out.add(evaluate(e, dict(zip(names, combo)), self.env))
            except (EvaluationError, ValidationError):
                continue
        return frozenset(out)

    def set_value(self, e, aenv, mode):
        """Evaluate a set expression; ``mode`` picks union or intersection over possibilities."""
        v = self.value(e, aenv)
        if v is _TOP:
            return None
        sets = [s for s in v if isinstance(s, frozenset)]
        if not sets:
            return frozenset()
        acc = set(sets[0])
        for s in sets[1:]:
            acc = acc | s if mode == "union" else acc & s
        return frozenset(acc)

    def proc(self, p, aenv):
        t = type(p)
        if t in (Stop, Skip, Div):
            return set()
        if t is Prefix:
            return self._prefix(p, aenv)
        if t in (ExtChoice, IntChoice):
            return set().union(*(self.proc(b, aenv) for b in p.branches)) if p.branches else set()
        if t is Interleave:
            return set().union(*(self.proc(b, aenv) for b in p.procs)) if p.procs else set()
        if t is Guard:
            return self.proc(p.proc, aenv)
        if t is GenParallel:
            return self.proc(p.left, aenv) | self.proc(p.right, aenv)
        if t is AlphaParallel:
            left, right = self.proc(p.left, aenv), self.proc(p.right, aenv)
            a = self.set_value(p.alpha_left, aenv, "union")
            b = self.set_value(p.alpha_right, aenv, "union")
            return (left if a is None else left & a) | (right if b is None else right & b)
        if t is Hide:
            inner = self.proc(p.proc, aenv)
            h = self.set_value(p.hidden, aenv, "inter")
            return inner if h is None else inner - h
        if t is Seq:
            return self.proc(p.first, aenv) | self.proc(p.second, aenv)
        if t is IfThenElse:
            return self.proc(p.then, aenv) | self.proc(p.orelse, aenv)
        if t is Replicated:
            over = self.set_value(p.over, aenv, "union")
            inner = dict(aenv)
            inner[p.var] = _TOP if over is None else over
            return self.proc(p.body, inner)
        if t is Call:
            return self._call(p, aenv)
        raise TypeError(p)

    def _call(self, p, aenv):
        d = self.env.lookup(p.name, len(p.args))
        args = []
        for a in p.args:
            v = self.value(a, aenv)
            if v is not _TOP and any(isinstance(x, tuple) and not isinstance(x, Event) for x in v):
                v = _TOP
            args.append(v)
        seen = self.keys_per_def.setdefault(p.name, set())
        key = (p.name, tuple(args))
        if key not in seen and len(seen) >= _MAX_KEYS_PER_DEF:
            key = (p.name, tuple(_TOP for _ in args))
        seen.add(key)
        if key in self.active or key in self.done:
            return self.memo.get(key, set())
        self.active.add(key)
        result = self.proc(d.body, dict(zip(d.params, key[1])))
        self.active.discard(key)
        self.done.add(key)
        if result != self.memo.get(key):
            self.memo[key] = result
            self.changed = True
        return result

    def _prefix(self, p, aenv):
        heads = self.value(p.target, aenv)
        out = set()
        if heads is _TOP:
            out.update(self.env.all_events())
            return out | self.proc(p.cont, {**aenv, **{f.name: _TOP for f in p.fields if type(f) is In}})
        cont_env = dict(aenv)
        for head in heads:
            if not isinstance(head, Event):
                continue
            sig = self.env.signature(head.channel)
            # widened names can put out-of-type values into the target itself
            if len(head.components) > len(sig) or any(
                v not in dom.atoms for v, dom in zip(head.components, sig)
            ):
                continue
            partials = [head]
            inner = dict(aenv)
            for f in p.fields:
                pos = len(partials[0]) - 1 if partials else 0
                if pos >= len(sig):
                    partials = []
                    break
                dom = frozenset(sig[pos].atoms)
                if type(f) is Out:
                    vals = self.value(f.value, inner)
                    vals = dom if vals is _TOP else frozenset(v for v in vals if v in dom)
                else:
                    vals = dom
                    if f.restrict is not None:
                        r = self.set_value(f.restrict, inner, "union")
                        if r is not None:
                            vals = dom & r
                    inner[f.name] = vals
                    prev = cont_env.get(f.name, frozenset())
                    cont_env[f.name] = prev | vals if prev is not _TOP else _TOP
                partials = [q.extend(v) for q in partials for v in sorted(vals, key=repr)]
            for q in partials:
                if len(q) - 1 == len(sig):
                    out.add(q)
                else:
                    try:
                        out.update(self.env.completions(q))
                    except ValidationError:
                        pass
        out |= self.proc(p.cont, cont_env)
        return out
