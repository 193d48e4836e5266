import dataclasses
import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gen import SystemGen, tiny_env
from oracle import strongly_bisimilar
from refine_pj.engine import explore_compiled
from refine_pj.errors import BoundExceeded, UnboundState
from refine_pj.models import Model, ModelConfig, bounded_queue, scheduler_system, state_cell
from refine_pj.refinement import check_deadlock_free
from refine_pj.semantics import (
    explore,
    explore_generic,
    initial_state,
    tau_closure,
    traces_upto,
    transitions,
)
from refine_pj.syntax import (
    TAU,
    TICK,
    Call,
    Div,
    Event,
    ExtChoice,
    GenParallel,
    Hide,
    Interleave,
    IntChoice,
    Name,
    Prefix,
    Proc,
    Productions,
    Seq,
    SetLit,
    Skip,
    Stop,
    evaluate,
)


def pre(ch, k):
    return Prefix(Name(ch), (), k)


def small_system(seed, bound=200):
    rng = random.Random(seed)
    env, root = SystemGen(rng).build()
    try:
        return env, root, explore(env, root, bound)
    except BoundExceeded:
        return env, root, None


# ---------------------------------------------------------------- examples


def test_stop_and_skip():
    env = tiny_env()
    assert transitions(initial_state(env, Stop())) == []
    (e, t), = transitions(initial_state(env, Skip()))
    assert e == TICK and transitions(t) == []
    lts = explore(env, Skip())
    assert lts.num_states == 2 and lts.is_terminal(0) and lts.is_deadlocked(1)


def test_variable_offers_load_and_every_store():
    env = Model(ModelConfig.of(1, 1, 1)).env
    s = initial_state(env, state_cell("ready.W1", True))
    got = {e for e, _ in transitions(s)}
    assert got == {
        Event("ready", "W1", "load", True),
        Event("ready", "W1", "store", False),
        Event("ready", "W1", "store", True),
    }


def test_parallel_waits_for_the_unsynchronised_prefix():
    env = tiny_env()
    env.define("P", (), pre("a", pre("b", Call("P"))))
    env.define("Q", (), pre("b", pre("c", Call("Q"))))
    p = GenParallel(Call("P"), Call("Q"), SetLit((Name("b"),)))
    assert [e for e, _ in transitions(initial_state(env, p))] == [Event("a")]


def test_internal_choice_is_two_taus():
    env = tiny_env()
    p = IntChoice((pre("a", Stop()), pre("b", Stop())))
    assert [e for e, _ in transitions(initial_state(env, p))] == [TAU, TAU]


def test_hidden_first_event_is_one_tau():
    env = tiny_env()
    p = Hide(pre("a", pre("b", pre("a", Skip()))), SetLit((Name("a"),)))
    assert [e for e, _ in transitions(initial_state(env, p))] == [TAU]
    lts = explore(env, p)
    assert traces_upto(lts, 5) == {(), (Event("b"),)}


def test_prefix_explores_to_two_states():
    lts = explore(tiny_env(), pre("a", Stop()))
    assert (lts.num_states, lts.num_edges) == (2, 1)


def test_queue_states_over_one_atom():
    env = Model(ModelConfig.of(1, 1, 1)).env
    env.datatype("One", ("V",))
    env.channel("enq", "deq", signature=("One",))
    env.channel("size", signature=("{0..2}",))
    lts = explore(env, bounded_queue("enq", "deq", "size", 2))
    # hand-rolled: contents are just lengths 0, 1, 2
    want = {}
    for n in range(3):
        e = {(Event("size", n), n)}
        if n < 2:
            e.add((Event("enq", "V"), n + 1))
        if n > 0:
            e.add((Event("deq", "V"), n - 1))
        want[n] = e
    assert lts.num_states == 3
    seen = {0: 0}
    for s in range(3):
        for e, t in lts.successors(s):
            if e == Event("enq", "V"):
                seen.setdefault(t, seen[s] + 1)
    for s, n in seen.items():
        assert {(e, seen[t]) for e, t in lts.successors(s)} == want[n]


def test_scheduler_system_with_two_processes():
    m = Model(ModelConfig.of(1, 1, 1))
    lts = explore(m.env, scheduler_system(1))
    assert check_deadlock_free(lts).holds
    assert lts.num_states == explore_generic(m.env, scheduler_system(1)).num_states


def test_tau_closure_examples():
    env = tiny_env()
    lts = explore(env, pre("a", Stop()))
    assert tau_closure(lts, 0) == {0}
    lts = explore(env, IntChoice((pre("a", Stop()), pre("b", Stop()))))
    assert tau_closure(lts, 0) == {0, 1, 2}
    lts = explore(env, Div())
    assert tau_closure(lts, 0) == {0}
    assert lts.successors(0) == [(TAU, 0)]


def test_bound_is_an_error_not_a_truncation():
    env = tiny_env()
    env.define("P", (), pre("a", Interleave((Call("P"), pre("b", Stop())))))
    with pytest.raises(BoundExceeded):
        explore(env, Call("P"), 50)


def test_unbound_state():
    lts = explore(tiny_env(), Stop())
    with pytest.raises(UnboundState):
        lts.successors(3)


def test_seq_turns_tick_into_tau():
    env = tiny_env()
    lts = explore(env, Seq(Skip(), pre("a", Stop())))
    assert lts.successors(0) == [(TAU, 1)]


def test_tick_synchronises_in_parallel():
    env = tiny_env()
    lts = explore(env, Interleave((pre("a", Skip()), Skip())))
    assert traces_upto(lts, 3, with_tick=True) == {(), (Event("a"),), (Event("a"), TICK)}


# ---------------------------------------------------------------- invariants


def test_exploration_is_deterministic():
    m = Model(ModelConfig.of(1, 2, 2, "one2many"))
    assert explore(m.env, m.impl) == explore(m.env, m.impl)


def _same_system(fast, slow, symmetric=False):
    assert fast.events == slow.events
    if not symmetric:
        assert (fast.num_states, fast.num_edges) == (slow.num_states, slow.num_edges)
    assert strongly_bisimilar(fast, slow)


@pytest.mark.parametrize("shape, w, r, k", [("one2one", 1, 1, 1), ("one2one", 1, 1, 2), ("one2many", 1, 2, 1), ("many2one", 2, 1, 1)])
def test_compiled_engine_matches_interpreter_on_models(shape, w, r, k):
    m = Model(ModelConfig.of(w, r, k, shape))
    fast = explore_compiled(m.env, m.impl, 10**6)
    assert fast is not None
    slow = explore_generic(m.env, m.impl)
    _same_system(fast, slow, symmetric=k > 1)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_compiled_engine_matches_interpreter(seed):
    env, root, _ = small_system(seed)
    try:
        slow = explore_generic(env, root, 300)
    except BoundExceeded:
        return
    fast = explore_compiled(env, root, 300)
    if fast is not None:
        _same_system(fast, slow, symmetric=True)


def _prefixes(trace):
    return {trace[:i] for i in range(len(trace) + 1)}


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_traces_prefix_closed(seed):
    env, root, lts = small_system(seed)
    if lts is None:
        return
    tr = traces_upto(lts, 6)
    for t in tr:
        assert _prefixes(t) <= tr


@given(st.integers(0, 2**32 - 1), st.sampled_from(["a", "b", "c", "d"]))
@settings(max_examples=200, deadline=None)
def test_hiding_law(seed, hidden_channel):
    env, root, lts = small_system(seed, 150)
    if lts is None:
        return
    hset = evaluate(Productions((Name(hidden_channel),)), {}, env)
    try:
        hidden = explore(env, Hide(root, Productions((Name(hidden_channel),))), 150)
    except BoundExceeded:
        return
    # traces of P with H deleted: treat H edges of P's own LTS as silent
    depth = 5
    want = set()
    silent = lambda e: e == TAU or e in hset

    def close(states):
        out, stack = set(states), list(states)
        while stack:
            for e, t in lts.successors(stack.pop()):
                if silent(e) and t not in out:
                    out.add(t)
                    stack.append(t)
        return frozenset(out)

    layer = {(): close({0})}
    want.add(())
    for _ in range(depth):
        nxt = {}
        for tr, states in layer.items():
            for u in states:
                for e, t in lts.successors(u):
                    if not silent(e) and e != TICK:
                        nxt.setdefault(tr + (e,), set()).add(t)
        layer = {tr: close(ts) for tr, ts in nxt.items()}
        want.update(layer)
    assert traces_upto(hidden, depth) == want


def _tau_free(seed):
    rng = random.Random(seed)
    env = tiny_env()
    chans = ["a", "b", "c"]

    def build(depth):
        if depth == 0 or rng.random() < 0.2:
            return Stop()
        if rng.random() < 0.3:
            return ExtChoice((pre(rng.choice(chans), build(depth - 1)), pre(rng.choice(chans), build(depth - 1))))
        return pre(rng.choice(chans), build(depth - 1))

    return env, build(4), build(4)


def _interleavings(s, t):
    if not s:
        return {t}
    if not t:
        return {s}
    return {(s[0],) + x for x in _interleavings(s[1:], t)} | {(t[0],) + x for x in _interleavings(s, t[1:])}


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_interleave_law(seed):
    env, p, q = _tau_free(seed)
    depth = 5
    tp = traces_upto(explore(env, p), depth)
    tq = traces_upto(explore(env, q), depth)
    want = set()
    for s, t in itertools.product(tp, tq):
        want |= {x for x in _interleavings(s, t) if len(x) <= depth}
    got = traces_upto(explore(env, Interleave((p, q))), depth)
    assert got == want


def _children(p):
    for f in dataclasses.fields(p):
        v = getattr(p, f.name)
        for c in v if isinstance(v, tuple) else (v,):
            if isinstance(c, Proc):
                yield c


def _tick_disciplined(p, under_choice=False):
    """Seq-free, and no choice branch can terminate before its first event."""
    if isinstance(p, Seq):
        return False
    if isinstance(p, Prefix):
        return _tick_disciplined(p.cont, False)
    if under_choice and isinstance(p, (Skip, Call)):
        return False
    nested = under_choice or isinstance(p, ExtChoice)
    return all(_tick_disciplined(c, nested) for c in _children(p))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=300, deadline=None)
def test_tick_discipline(seed):
    rng = random.Random(seed)
    env, root = SystemGen(rng).build()
    bodies = [root] + [env.lookup(f"P{i}", 0).body for i in range(2)]
    if not all(_tick_disciplined(b) for b in bodies):
        return
    try:
        lts = explore(env, root, 200)
    except BoundExceeded:
        return
    for s in range(lts.num_states):
        labels = [e for e, _ in lts.successors(s)]
        if TICK in labels:
            assert labels == [TICK] * len(labels), labels


def test_unbounded_component_respects_the_bound():
    # the left leaf alone is infinite; exploring it must stop at the bound
    env = tiny_env()
    env.define("P", (), Seq(Interleave((pre("c", Stop()), pre("a", Call("P")))), pre("b", Call("P"))))
    p = GenParallel(Call("P"), pre("b", Stop()), SetLit((Name("b"),)))
    with pytest.raises(BoundExceeded):
        explore(env, p, 100)
    assert explore_compiled(env, p, 100) is None
