"""A small machine-readable CSP dialect: parser and pretty-printer.

Process operators, loosest first::

    P \\ S                         hiding
    P [| S |] Q   P ||| Q   P [A || B] Q
    P ; Q
    P [] Q   P |~| Q
    e -> P   g & P                prefix and guard (right-nested)

``if``/``then``/``else`` and the replicated forms ``[] x : S @ P``,
``|~| x : S @ P`` and ``||| x : S @ P`` extend as far right as possible.

A prefix starts with a target (a channel, parameter or dotted reference such
as ``ready.pid.store``) followed by fields ``!v`` (output), ``?x`` or
``?x:S`` (input) and ``.v``.  A target written in parentheses ends there, so
``(c).v`` puts ``v`` in a field while ``c.v`` is a dotted target.

Top-level statements start in column 1; continuation lines are indented.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ArityError, CspSyntaxError, ModelError, UnknownNameError
from .refinement import SemanticModel
from .syntax import (
    FUNCTIONS,
    REPLICATED_OPS,
    AlphaParallel,
    BinOp,
    Call,
    Const,
    Div,
    Dot,
    Environment,
    ExtChoice,
    Func,
    GenParallel,
    Guard,
    Hide,
    IfThenElse,
    In,
    Interleave,
    IntChoice,
    Name,
    Out,
    Prefix,
    Productions,
    RangeSet,
    Replicated,
    Seq,
    SeqLit,
    SetLit,
    Skip,
    Stop,
    UnOp,
    free_names,
    range_domain_name,
    validate,
)

KEYWORDS = {
    "STOP", "SKIP", "DIV", "if", "then", "else", "true", "false", "and", "or", "not",
    "assert", "datatype", "subtype", "channel",
}

_SYMBOLS = [
    "[FD=", "[T=", "[F=", "|~|", "|||", ":[", "[|", "|]", "{|", "|}", "[]", "||", "->", "==", "!=", "<=", ">=", "..",
    "(", ")", "[", "]", "{", "}", ",", ".", "!", "?", ":", "=", "&", ";", "\\", "<", ">", "+", "-", "^", "#", "@", "|",
]
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")
_NUMBER = re.compile(r"[0-9]+")
_MAX_DEPTH = 400


@dataclass(frozen=True)
class Token:
    kind: str  # 'ident', 'number', 'sym', 'eof'
    text: str
    line: int
    col: int


@dataclass(frozen=True)
class Assertion:
    """``assert`` statement.  ``kind`` is ``refinement``, ``deadlock free``,
    ``divergence free`` or ``deterministic``."""

    kind: str
    left: object
    right: object = None
    model: SemanticModel | None = None


def tokenize(text: str) -> list:
    out = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if c in " \t\r\f\v":
            i, col = i + 1, col + 1
            continue
        if text.startswith("--", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if text.startswith("{-", i):
            depth, start = 0, (line, col)
            while i < n:
                if text.startswith("{-", i):
                    depth += 1
                    i, col = i + 2, col + 2
                elif text.startswith("-}", i):
                    depth -= 1
                    i, col = i + 2, col + 2
                    if depth == 0:
                        break
                elif text[i] == "\n":
                    i, line, col = i + 1, line + 1, 1
                else:
                    i, col = i + 1, col + 1
            else:
                raise CspSyntaxError("unterminated comment", *start)
            continue
        m = _IDENT.match(text, i) or _NUMBER.match(text, i)
        if m:
            word = m.group()
            out.append(Token("number" if word[0].isdigit() else "ident", word, line, col))
            i, col = m.end(), col + len(word)
            continue
        for sym in _SYMBOLS:
            if text.startswith(sym, i):
                out.append(Token("sym", sym, line, col))
                i, col = i + len(sym), col + len(sym)
                break
        else:
            raise CspSyntaxError(f"unexpected character {c!r}", line, col)
    out.append(Token("eof", "", line, col))
    return out


class _Backtrack(Exception):
    pass


class Parser:
    """Recursive descent over one statement's tokens."""

    def __init__(self, tokens: list):
        self.toks = tokens
        self.pos = 0
        self.depth = 0
        self.furthest: CspSyntaxError | None = None
        self.refs: list = []  # (kind, name, arity, token, scope) checked after all statements

    # -- token helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def at(self, *texts) -> bool:
        t = self.tok
        return t.kind in ("sym", "ident") and t.text in texts

    def take(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        return self.take()

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS:
            self.fail("expected a name")
        return self.take()

    def fail(self, msg: str, tok: Token | None = None):
        t = tok or self.tok
        best = self.furthest
        if best is not None and (best.line, best.column) > (t.line, t.col):
            # an abandoned alternative got further; its message is the useful one
            raise best
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise CspSyntaxError(f"{msg}, found {found}", t.line, t.col)

    def _enter(self):
        self.depth += 1
        if self.depth > _MAX_DEPTH:
            self.fail("expression nested too deeply")

    def attempt(self, fn):
        """Run ``fn``; on a syntax error rewind and return None."""
        saved, saved_refs, saved_depth = self.pos, len(self.refs), self.depth
        try:
            return fn()
        except (CspSyntaxError, _Backtrack) as exc:
            if isinstance(exc, (ArityError, UnknownNameError)) or "nested too deeply" in str(exc):
                raise
            if isinstance(exc, CspSyntaxError):
                if self.furthest is None or (exc.line, exc.column) > (self.furthest.line, self.furthest.column):
                    self.furthest = exc
            self.pos, self.depth = saved, saved_depth
            del self.refs[saved_refs:]
            return None

    # -- processes

    def proc(self, scope=frozenset()):
        self._enter()
        p = self.par(scope)
        while self.at("\\"):
            self.take()
            p = Hide(p, self.expr(scope))
        self.depth -= 1
        return p

    def par(self, scope):
        p = self.seq(scope)
        chain = None  # operands of an interleave built in this chain
        while True:
            if self.at("[|"):
                self.take()
                sync = self.expr(scope)
                self.expect("|]")
                p = GenParallel(p, self.seq(scope), sync)
                chain = None
            elif self.at("|||"):
                self.take()
                q = self.seq(scope)
                chain = (chain if chain is not None else (p,)) + (q,)
                p = Interleave(chain)
            elif self.at("["):
                self.take()
                a = self.expr(scope)
                self.expect("||")
                b = self.expr(scope)
                self.expect("]")
                p = AlphaParallel(p, a, b, self.seq(scope))
                chain = None
            else:
                return p

    def seq(self, scope):
        p = self.choice(scope)
        while self.at(";"):
            self.take()
            p = Seq(p, self.choice(scope))
        return p

    def choice(self, scope):
        p = self.prefix(scope)
        op, chain = None, None
        while self.at("[]", "|~|"):
            sym = self.take().text
            q = self.prefix(scope)
            if sym == op:
                chain = chain + (q,)
            else:
                op, chain = sym, (p, q)
            p = ExtChoice(chain) if op == "[]" else IntChoice(chain)
        return p

    def prefix(self, scope):
        self._enter()
        try:
            t = self.tok
            if t.kind == "ident" and t.text == "if":
                return self.conditional(scope)
            if self.at(*REPLICATED_OPS):
                return self.replicated(scope)
            guard = self.attempt(lambda: self._guard(scope))
            if guard is not None:
                return guard
            pre = self.attempt(lambda: self._prefix(scope))
            if pre is not None:
                return pre
            if self.at("("):
                self.take()
                p = self.proc(scope)
                self.expect(")")
                return p
            if t.kind == "ident" and t.text in ("STOP", "SKIP", "DIV"):
                self.take()
                return {"STOP": Stop(), "SKIP": Skip(), "DIV": Div()}[t.text]
            name = self.ident()
            args = ()
            if self.at("("):
                self.take()
                args = self.args(scope, ")")
            self.refs.append(("call", name.text, len(args), name, scope))
            return Call(name.text, args)
        finally:
            self.depth -= 1

    def _guard(self, scope):
        cond = self.expr(scope)
        if not self.at("&"):
            raise _Backtrack
        self.take()
        return Guard(cond, self.prefix(scope))

    def _prefix(self, scope):
        if self.at("("):
            self.take()
            target = self.expr(scope)
            self.expect(")")
        else:
            t = self.tok
            if t.kind == "ident" and t.text in KEYWORDS and t.text not in ("true", "false"):
                raise _Backtrack
            target = self.dotted(scope)
        fields = []
        inner = set(scope)
        while self.at(".", "!", "?"):
            sym = self.take().text
            if sym == "?":
                name = self.ident()
                restrict = None
                if self.at(":"):
                    self.take()
                    restrict = self.primary(frozenset(inner))
                fields.append(In(name.text, restrict))
                inner.add(name.text)
            else:
                fields.append(Out(self.primary(frozenset(inner)), sym == "!"))
        if not self.at("->"):
            raise _Backtrack
        self.take()
        return Prefix(target, tuple(fields), self.prefix(frozenset(inner)))

    def conditional(self, scope):
        self.expect("if")
        cond = self.expr(scope)
        self.expect("then")
        then = self.proc(scope)
        orelse = Skip()
        if self.at("else"):
            self.take()
            orelse = self.proc(scope)
        return IfThenElse(cond, then, orelse)

    def replicated(self, scope):
        op = self.take().text
        var = self.ident()
        self.expect(":")
        over = self.expr(scope)
        self.expect("@")
        return Replicated(op, var.text, over, self.proc(scope | {var.text}))

    # -- values

    def args(self, scope, close: str) -> tuple:
        out = []
        if not self.at(close):
            out.append(self.expr(scope))
            while self.at(","):
                self.take()
                out.append(self.expr(scope))
        self.expect(close)
        return tuple(out)

    def expr(self, scope):
        self._enter()
        e = self._and(scope)
        while self.at("or"):
            self.take()
            e = BinOp("or", e, self._and(scope))
        self.depth -= 1
        return e

    def _and(self, scope):
        e = self._not(scope)
        while self.at("and"):
            self.take()
            e = BinOp("and", e, self._not(scope))
        return e

    def _not(self, scope):
        if self.at("not"):
            self.take()
            self._enter()
            e = UnOp("not", self._not(scope))
            self.depth -= 1
            return e
        return self._cmp(scope)

    def _cmp(self, scope):
        e = self.cat(scope)
        if self.at("==", "!=", "<", "<=", ">", ">="):
            op = self.take().text
            e = BinOp(op, e, self.cat(scope))
        return e

    def cat(self, scope):
        e = self._add(scope)
        while self.at("^"):
            self.take()
            e = BinOp("^", e, self._add(scope))
        return e

    def _add(self, scope):
        e = self._unary(scope)
        while self.at("+", "-"):
            op = self.take().text
            e = BinOp(op, e, self._unary(scope))
        return e

    def _unary(self, scope):
        if self.at("-"):
            self.take()
            if self.tok.kind == "number":
                return Const(-int(self.take().text))
            self._enter()
            e = UnOp("-", self._unary(scope))
            self.depth -= 1
            return e
        if self.at("#"):
            self.take()
            self._enter()
            e = UnOp("#", self._unary(scope))
            self.depth -= 1
            return e
        return self.dotted(scope)

    def dotted(self, scope):
        parts = [self.primary(scope)]
        while self.at(".") and self.peek().kind != "eof":
            self.take()
            parts.append(self.primary(scope))
        return parts[0] if len(parts) == 1 else Dot(tuple(parts))

    def primary(self, scope):
        self._enter()
        try:
            t = self.tok
            if t.kind == "number":
                self.take()
                return Const(int(t.text))
            if t.kind == "ident":
                if t.text in ("true", "false"):
                    self.take()
                    return Const(t.text == "true")
                name = self.ident()
                if name.text in FUNCTIONS and self.at("("):
                    self.take()
                    args = self.args(scope, ")")
                    if len(args) != FUNCTIONS[name.text]:
                        raise ArityError(f"{name.text} takes {FUNCTIONS[name.text]} arguments, got {len(args)}", name.line, name.col)
                    return Func(name.text, args)
                self.refs.append(("name", name.text, 0, name, scope))
                return Name(name.text)
            if self.at("("):
                self.take()
                e = self.expr(scope)
                self.expect(")")
                return e
            if self.at("<"):
                self.take()
                items = []
                if not self.at(">"):
                    items.append(self.cat(scope))
                    while self.at(","):
                        self.take()
                        items.append(self.cat(scope))
                self.expect(">")
                return SeqLit(tuple(items))
            if self.at("{|"):
                self.take()
                return Productions(self.args(scope, "|}"))
            if self.at("{"):
                self.take()
                if self.at("}"):
                    self.take()
                    return SetLit(())
                first = self.expr(scope)
                if self.at(".."):
                    self.take()
                    hi = self.expr(scope)
                    self.expect("}")
                    return RangeSet(first, hi)
                items = [first]
                while self.at(","):
                    self.take()
                    items.append(self.expr(scope))
                self.expect("}")
                return SetLit(tuple(items))
            self.fail("expected a value")
        finally:
            self.depth -= 1


# ---------------------------------------------------------------- statements


def _statements(tokens: list) -> list:
    """Split at tokens that start in column 1."""
    groups, cur = [], []
    for t in tokens:
        if t.kind == "eof":
            break
        if t.col == 1 and cur:
            groups.append(cur)
            cur = []
        cur.append(t)
    if cur:
        groups.append(cur)
    eof = tokens[-1]
    return [g + [Token("eof", "", eof.line, eof.col)] for g in groups]


def parse(text) -> tuple:
    """Parse a source text into ``(Environment, [Assertion])``.

    Every failure is a :class:`CspSyntaxError` carrying a line and column.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CspSyntaxError(f"input is not UTF-8 ({exc.reason})", 1, exc.start + 1) from None
    try:
        return _parse(text)
    except RecursionError:
        raise CspSyntaxError("input nested too deeply", 1, 1) from None


def _parse(text: str) -> tuple:
    env = Environment()
    assertions = []
    refs = []
    def_pos = {}
    for group in _statements(tokenize(text)):
        p = Parser(group)
        head = p.tok
        if head.text == "datatype" and head.kind == "ident":
            p.take()
            name = p.ident()
            p.expect("=")
            atoms = [p.ident().text]
            while p.at("|"):
                p.take()
                atoms.append(p.ident().text)
            _guarded(lambda: env.datatype(name.text, atoms), name)
        elif head.text == "subtype" and head.kind == "ident":
            p.take()
            name = p.ident()
            p.expect("=")
            atoms = [p.ident().text]
            while p.at("|"):
                p.take()
                atoms.append(p.ident().text)
            _guarded(lambda: env.subtype(name.text, atoms), name)
        elif head.text == "channel" and head.kind == "ident":
            p.take()
            names = [p.ident()]
            while p.at(","):
                p.take()
                names.append(p.ident())
            sig = []
            if p.at(":"):
                p.take()
                sig.append(_domain_ref(p, env))
                while p.at("."):
                    p.take()
                    sig.append(_domain_ref(p, env))
            for n in names:
                _guarded(lambda: env.channel(n.text, signature=sig), n)
        elif head.text == "assert" and head.kind == "ident":
            p.take()
            assertions.append(_assertion(p))
        else:
            name = p.ident()
            params = []
            if p.at("("):
                p.take()
                if not p.at(")"):
                    params.append(p.ident().text)
                    while p.at(","):
                        p.take()
                        params.append(p.ident().text)
                p.expect(")")
            if len(set(params)) != len(params):
                raise CspSyntaxError(f"repeated parameter in {name.text}", name.line, name.col)
            p.expect("=")
            body = p.proc(frozenset(params))
            key = (name.text, len(params))
            if key in env.definitions:
                raise CspSyntaxError(f"{name.text} defined twice", name.line, name.col)
            env.define(name.text, params, body)
            def_pos[name.text] = name
        if p.tok.kind != "eof":
            p.fail("unexpected text")
        refs.extend(p.refs)
    _resolve(env, refs)
    try:
        validate(env)
    except ModelError as exc:
        where = def_pos.get(getattr(exc, "definition", None))
        line, col = (where.line, where.col) if where else (1, 1)
        raise CspSyntaxError(str(exc), line, col) from exc
    return env, assertions


def _guarded(fn, tok: Token):
    try:
        return fn()
    except CspSyntaxError:
        raise
    except ModelError as exc:
        raise CspSyntaxError(str(exc), tok.line, tok.col) from exc


def _domain_ref(p: Parser, env: Environment) -> str:
    if p.at("{"):
        start = p.take()
        lo = p.expr(frozenset())
        p.expect("..")
        hi = p.expr(frozenset())
        p.expect("}")
        if not (type(lo) is Const and type(hi) is Const and isinstance(lo.value, int) and isinstance(hi.value, int)):
            raise CspSyntaxError("range bounds must be integer literals", start.line, start.col)
        return range_domain_name(lo.value, hi.value)
    t = p.ident()
    if not env.has_domain(t.text):
        raise UnknownNameError(f"unknown type {t.text}", t.line, t.col)
    return t.text


def _assertion(p: Parser) -> Assertion:
    left = p.proc()
    if p.at("[T=", "[F=", "[FD="):
        tag = p.take().text[1:-1]
        right = p.proc()
        return Assertion("refinement", left, right, SemanticModel.parse(tag))
    p.expect(":[")
    words = []
    while p.tok.kind == "ident":
        words.append(p.take().text)
    kind = " ".join(words)
    if kind not in ("deadlock free", "divergence free", "deterministic"):
        p.fail("expected 'deadlock free', 'divergence free' or 'deterministic'")
    model = None
    if p.at("["):
        p.take()
        tag = p.ident().text
        if tag not in ("F", "FD"):
            p.fail("expected model F or FD")
        model = SemanticModel.parse(tag)
        p.expect("]")
    p.expect("]")
    return Assertion(kind, left, None, model)


def _resolve(env: Environment, refs: list):
    arities: dict = {}
    for name, arity in env.definitions:
        arities.setdefault(name, set()).add(arity)
    for kind, name, arity, tok, scope in refs:
        if kind == "call":
            if name in scope and arity == 0:
                # a parameter standing for a process is not supported
                raise UnknownNameError(f"{name} is a parameter, not a process", tok.line, tok.col)
            if name not in arities:
                raise UnknownNameError(f"unknown process {name}", tok.line, tok.col)
            if arity not in arities[name]:
                want = ", ".join(map(str, sorted(arities[name])))
                raise ArityError(f"{name} expects {want} arguments, got {arity}", tok.line, tok.col)
        else:
            if name in scope or env.atom_type(name) is not None or name in env.channels or env.has_domain(name):
                continue
            raise UnknownNameError(f"unknown name {name}", tok.line, tok.col)


# ---------------------------------------------------------------- printing

# process levels, loosest first
_HIDE, _PAR, _SEQ, _CHOICE, _PREFIX, _ATOM = range(6)
_OPEN = -1  # if/replicated: only safe at top level or inside brackets

# value levels
_OR, _AND, _NOT, _CMP, _CAT, _ADD, _UNARY, _DOT, _PRIM = range(9)
_BIN_LEVEL = {"or": _OR, "and": _AND, "==": _CMP, "!=": _CMP, "<": _CMP, "<=": _CMP, ">": _CMP, ">=": _CMP,
              "^": _CAT, "+": _ADD, "-": _ADD}


def format_expr(e) -> str:
    """Canonical text for a process or value expression."""
    if isinstance(e, (Stop, Skip, Div, Prefix, ExtChoice, IntChoice, Guard, GenParallel, AlphaParallel,
                      Interleave, Hide, Seq, Call, IfThenElse, Replicated)):
        return _proc(e)[0]
    return _val(e)[0]


def _wrap(part, level) -> str:
    text, have = part
    return text if have >= level else f"({text})"


def _proc(p) -> tuple:
    t = type(p)
    if t is Stop:
        return "STOP", _ATOM
    if t is Skip:
        return "SKIP", _ATOM
    if t is Div:
        return "DIV", _ATOM
    if t is Call:
        if not p.args:
            return p.name, _ATOM
        return p.name + "(" + ", ".join(_val(a)[0] for a in p.args) + ")", _ATOM
    if t is Prefix:
        target = _val(p.target)
        closed = p.fields and type(p.fields[0]) is Out and not p.fields[0].bang
        text = f"({target[0]})" if closed or target[1] < _DOT else target[0]
        for f in p.fields:
            if type(f) is In:
                text += "?" + f.name + ("" if f.restrict is None else ":" + _wrap(_val(f.restrict), _PRIM))
            else:
                text += ("!" if f.bang else ".") + _wrap(_val(f.value), _PRIM)
        return f"{text} -> {_wrap(_proc(p.cont), _PREFIX)}", _PREFIX
    if t is Guard:
        return f"{_val(p.cond)[0]} & {_wrap(_proc(p.proc), _PREFIX)}", _PREFIX
    if t in (ExtChoice, IntChoice):
        op = " [] " if t is ExtChoice else " |~| "
        return op.join(_wrap(_proc(b), _PREFIX) for b in p.branches), _CHOICE
    if t is Seq:
        return f"{_wrap(_proc(p.first), _SEQ)} ; {_wrap(_proc(p.second), _CHOICE)}", _SEQ
    if t is GenParallel:
        return f"{_wrap(_proc(p.left), _PAR)} [| {_val(p.sync)[0]} |] {_wrap(_proc(p.right), _SEQ)}", _PAR
    if t is AlphaParallel:
        return (f"{_wrap(_proc(p.left), _PAR)} [{_val(p.alpha_left)[0]} || {_val(p.alpha_right)[0]}] "
                f"{_wrap(_proc(p.right), _SEQ)}"), _PAR
    if t is Interleave:
        if len(p.procs) < 2:
            raise ValueError("an interleaving needs at least two operands to be printed")
        return " ||| ".join(_wrap(_proc(q), _SEQ) for q in p.procs), _PAR
    if t is Hide:
        return f"{_wrap(_proc(p.proc), _HIDE)} \\ {_val(p.hidden)[0]}", _HIDE
    if t is IfThenElse:
        return f"if {_val(p.cond)[0]} then {_proc(p.then)[0]} else {_proc(p.orelse)[0]}", _OPEN
    if t is Replicated:
        return f"{p.op} {p.var} : {_val(p.over)[0]} @ {_proc(p.body)[0]}", _OPEN
    raise TypeError(f"not a process: {p!r}")


def _val(e) -> tuple:
    t = type(e)
    if t is Const:
        v = e.value
        if isinstance(v, bool):
            return ("true" if v else "false"), _PRIM
        if isinstance(v, int):
            return str(v), (_PRIM if v >= 0 else _UNARY)
        raise ValueError(f"constant {v!r} has no source form")
    if t is Name:
        return e.ident, _PRIM
    if t is Dot:
        return ".".join(_wrap(_val(x), _PRIM) for x in e.parts), _DOT
    if t is BinOp:
        lvl = _BIN_LEVEL[e.op]
        if lvl == _CMP:
            return f"{_wrap(_val(e.left), _CAT)} {e.op} {_wrap(_val(e.right), _CAT)}", _CMP
        return f"{_wrap(_val(e.left), lvl)} {e.op} {_wrap(_val(e.right), lvl + 1)}", lvl
    if t is UnOp:
        if e.op == "not":
            return f"not {_wrap(_val(e.operand), _NOT)}", _NOT
        if e.op == "-":
            return f"-({_val(e.operand)[0]})", _UNARY
        return f"#{_wrap(_val(e.operand), _UNARY)}", _UNARY
    if t is Func:
        return e.name + "(" + ", ".join(_val(a)[0] for a in e.args) + ")", _PRIM
    if t is SeqLit:
        return "<" + ", ".join(_wrap(_val(x), _CAT) for x in e.items) + ">", _PRIM
    if t is SetLit:
        return _brace(", ".join(_val(x)[0] for x in e.items)), _PRIM
    if t is RangeSet:
        return _brace(_val(e.lo)[0] + ".." + _val(e.hi)[0]), _PRIM
    if t is Productions:
        return "{| " + ", ".join(_val(x)[0] for x in e.items) + " |}", _PRIM
    raise TypeError(f"not a value expression: {e!r}")


def _brace(inner: str) -> str:
    # "{-" would open a comment
    return "{ " + inner + "}" if inner.startswith("-") else "{" + inner + "}"


def format_source(env: Environment, assertions=()) -> str:
    """Render an environment (and assertions) as parseable source."""
    lines = []
    subtypes = []
    for name in sorted(env.domains):
        dom = env.domains[name]
        lines.append(f"datatype {name} = " + " | ".join(dom.atoms))
        subtypes.extend(dom.subdomains)
    for name, atoms in subtypes:
        lines.append(f"subtype {name} = " + " | ".join(atoms))
    for name in sorted(env.channels):
        sig = env.channels[name]
        lines.append(f"channel {name}" + (" : " + ".".join(sig) if sig else ""))
    for d in env.sorted_definitions():
        head = d.name + (f"({', '.join(d.params)})" if d.params else "")
        lines.append(f"{head} = {format_expr(d.body)}")
    for a in assertions:
        lines.append(format_assertion(a))
    return "\n".join(lines) + ("\n" if lines else "")


def format_assertion(a: Assertion) -> str:
    if a.kind == "refinement":
        return f"assert {_wrap(_proc(a.left), _HIDE)} [{a.model.tag}= {_wrap(_proc(a.right), _HIDE)}"
    tail = f" [{a.model.tag}]" if a.model is not None else ""
    return f"assert {_wrap(_proc(a.left), _HIDE)} :[{a.kind}{tail}]"


def parse_expr(text: str, env: Environment | None = None, params=()):
    """Parse a single process expression (no name resolution unless ``env``)."""
    toks = tokenize(text)
    p = Parser(toks)
    e = p.proc(frozenset(params))
    if p.tok.kind != "eof":
        p.fail("unexpected text")
    if env is not None:
        _resolve(env, p.refs)
    return e


__all__ = ["Assertion", "Parser", "format_assertion", "format_expr", "format_source", "parse", "parse_expr", "tokenize",
           "free_names"]
