import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gen import SyntaxGen
from refine_pj.cspm import Assertion, format_expr, format_source, parse, parse_expr, tokenize
from refine_pj.errors import ArityError, CspSyntaxError, UnknownNameError
from refine_pj.models import TABLE_ROWS, Model, ModelConfig
from refine_pj.refinement import SemanticModel
from refine_pj.syntax import (
    Call,
    Const,
    Dot,
    ExtChoice,
    Guard,
    Hide,
    In,
    Interleave,
    Name,
    Out,
    Prefix,
    Productions,
    SetLit,
    Stop,
    unguarded_calls,
)


def test_single_definition():
    env, asserts = parse("channel a\nP = a -> P\n")
    assert asserts == []
    d = env.lookup("P", 0)
    assert d.body == Prefix(Name("a"), (), Call("P"))
    assert not unguarded_calls(d.body)


def test_datatype():
    env, _ = parse("datatype Values = A | B")
    assert env.domain("Values").atoms == ("A", "B")


def test_failures_assertion():
    src = "channel a\nSPEC = a -> SPEC\nIMPL = a -> IMPL\nassert SPEC [F= IMPL\n"
    _, asserts = parse(src)
    assert asserts == [Assertion("refinement", Call("SPEC"), Call("IMPL"), SemanticModel.FAILURES)]


def test_property_assertions():
    src = "P = STOP\nassert P :[deadlock free]\nassert P :[divergence free [FD]]\nassert P :[deterministic [F]]\n"
    _, asserts = parse(src)
    assert [(a.kind, a.model) for a in asserts] == [
        ("deadlock free", None),
        ("divergence free", SemanticModel.FD),
        ("deterministic", SemanticModel.FAILURES),
    ]


def test_format_examples():
    assert format_expr(Prefix(Name("a"), (), Stop())) == "a -> STOP"
    assert format_expr(Hide(Call("P"), SetLit((Name("a"),)))) == "P \\ {a}"


def test_precedence():
    e = parse_expr("a -> P [] b -> Q ; R ||| S \\ {a}")
    assert isinstance(e, Hide)
    assert isinstance(e.proc, Interleave)
    left = e.proc.procs[0]
    assert type(left).__name__ == "Seq"
    assert isinstance(left.first, ExtChoice)


def test_fields_and_parenthesised_target():
    e = parse_expr("(c).v!x?y:{0..1} -> STOP")
    assert e.target == Name("c")
    assert e.fields[0] == Out(Name("v"), False)
    assert e.fields[1] == Out(Name("x"), True)
    assert isinstance(e.fields[2], In) and e.fields[2].name == "y"
    dotted = parse_expr("c.v -> STOP")
    assert dotted.target == Dot((Name("c"), Name("v"))) and dotted.fields == ()


def test_guard_and_negative_literal():
    e = parse_expr("x > -1 & a -> STOP")
    assert isinstance(e, Guard)
    assert e.cond.right == Const(-1)


def test_productions_and_comments():
    env, _ = parse("-- a comment\nchannel a, b : {0..1}\n{- block\n comment -}\nP = a?x -> b!x -> P \\ {| a |}\n")
    body = env.lookup("P", 0).body
    assert isinstance(body, Hide) and body.hidden == Productions((Name("a"),))


def test_continuation_lines():
    env, _ = parse("channel a, b\nP = a ->\n    b ->\n    P\n")
    assert env.lookup("P", 0).body == Prefix(Name("a"), (), Prefix(Name("b"), (), Call("P")))


@pytest.mark.parametrize(
    "src, exc, pos",
    [
        ("channel a\nP = a -> Q\n", UnknownNameError, (2, 10)),
        ("channel a\nP(x) = a -> P\n", ArityError, (2, 13)),
        ("channel a\nP = a -> \n", CspSyntaxError, None),
        ("P = STOP\nassert P [X= P\n", CspSyntaxError, (2, 12)),
        ("channel a : Nope\n", UnknownNameError, (1, 13)),
        ("channel a\nP = a -> STOP\nP = STOP\n", CspSyntaxError, (3, 1)),
        ("channel a\nP = head(1, 2) & a -> STOP\n", ArityError, (2, 5)),
        ("P = STOP $\n", CspSyntaxError, (1, 10)),
        ("{- never closed", CspSyntaxError, (1, 1)),
    ],
)
def test_diagnostics_carry_positions(src, exc, pos):
    with pytest.raises(exc) as info:
        parse(src)
    err = info.value
    assert err.line >= 1 and err.column >= 1
    if pos is not None:
        assert (err.line, err.column) == pos


def test_unguarded_recursion_is_a_diagnostic():
    with pytest.raises(CspSyntaxError) as info:
        parse("P = P\n")
    assert info.value.line == 1


def test_invalid_utf8_is_a_diagnostic():
    with pytest.raises(CspSyntaxError):
        parse(b"P = \xff\xfe")


def test_deep_nesting_is_a_diagnostic():
    with pytest.raises(CspSyntaxError):
        parse("P = " + "(" * 5000 + "STOP" + ")" * 5000)


def test_tokenizer_positions():
    toks = tokenize("P =\n  a -> STOP")
    assert [(t.text, t.line, t.col) for t in toks[:-1]] == [("P", 1, 1), ("=", 1, 3), ("a", 2, 3), ("->", 2, 5), ("STOP", 2, 8)]


def _round_trip(seed: int):
    e = SyntaxGen(random.Random(seed)).proc(4)
    text = format_expr(e)
    back = parse_expr(text)
    assert back == e, text
    assert format_expr(back) == text


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=300, deadline=None)
def test_round_trip_property(seed):
    _round_trip(seed)


@pytest.mark.parametrize("shape, w, r", TABLE_ROWS + (("one2one", 1, 1),))
def test_model_sources_round_trip(shape, w, r):
    m = Model(ModelConfig.of(w, r, 2, shape))
    text = format_source(m.env)
    env, _ = parse(text)
    assert env == m.env
    assert format_source(env) == text


def test_source_with_assertions_round_trip():
    src = (
        "datatype V = A | B\nsubtype VA = A\nchannel c : V.{0..2}\nchannel t\n"
        "P(x) = c!x.0 -> P(x) [] t -> SKIP ; P(x)\nQ = P(A) [| {| c.A |} |] P(B) \\ {t}\n"
        "assert P(A) [T= Q\nassert Q [FD= Q\nassert Q :[deadlock free [F]]\n"
    )
    env, asserts = parse(src)
    env2, asserts2 = parse(format_source(env, asserts))
    assert env2 == env and asserts2 == asserts
