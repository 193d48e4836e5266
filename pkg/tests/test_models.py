import random

import pytest

from refine_pj.errors import AtomOutOfDomain, ShapeMismatch
from refine_pj.models import (
    Model,
    ModelConfig,
    bounded_queue,
    channel_core,
    comm_primitive,
    end_claim,
    monitor,
    process_metadata,
    restricted_process,
    runtime_action,
    scheduler_system,
    shared_channel,
    state_cell,
)
from refine_pj.refinement import after, check_deadlock_free, check_divergence_free, check_traces
from refine_pj.semantics import explore, traces_upto
from refine_pj.syntax import Call, Const, Event, GenParallel, In, Name, Out, Prefix, Productions, Stop, alphabet_of

E = Event


@pytest.fixture(scope="module")
def m11():
    return Model(ModelConfig.of(1, 1, 1))


@pytest.fixture(scope="module")
def m21():
    return Model(ModelConfig.of(2, 1, 1))


@pytest.fixture(scope="module")
def m22():
    return Model(ModelConfig.of(2, 2, 1))


def accepts(lts, trace) -> bool:
    return bool(after(lts, trace))


def offered(lts, trace) -> set:
    return {e for s in after(lts, trace) for e, _ in lts.successors(s)}


def emit(parts, k):
    """``a.b.c -> k`` for concrete event components."""
    return Prefix(Name(parts[0]), tuple(Out(Name(p) if isinstance(p, str) else Const(p), False) for p in parts[1:]), k)


def with_metadata(env, frag, pids, extra=()):
    """Compose a fragment with the per-process cells it talks to."""
    sync = Productions(tuple(Name(c) for c in ("ready", "running", "claim_process", "release_process") + extra))
    return GenParallel(frag, process_metadata(pids), sync)


# ---------------------------------------------------------------- configuration


def test_config_shapes():
    assert ModelConfig.of(2, 1).shape == "many2one"
    assert ModelConfig.of(1, 2).shape == "one2many"
    assert ModelConfig.of(2, 2).shape == "many2many"
    with pytest.raises(ShapeMismatch):
        ModelConfig("many2one", ("W1",), ("R1",))
    with pytest.raises(ShapeMismatch):
        ModelConfig("one2one", ("P",), ("P",))
    with pytest.raises(ValueError):
        ModelConfig.of(1, 1, 1, run_queue_capacity=1)


# ---------------------------------------------------------------- state cells and monitors


def test_state_cell_last_writer_wins(m11):
    lts = explore(m11.env, state_cell("ready.W1", True))
    assert accepts(lts, [E("ready", "W1", "store", False), E("ready", "W1", "load", False)])
    assert not accepts(lts, [E("ready", "W1", "store", False), E("ready", "W1", "load", True)])
    assert accepts(lts, [E("ready", "W1", "load", True), E("ready", "W1", "load", True)])


def test_state_cell_domain(m11):
    lts = explore(m11.env, state_cell("data.C1", "A", m11.env.domain("Values")))
    assert E("data", "C1", "load", "A") in offered(lts, [])
    assert E("data", "C1", "load", "B") not in offered(lts, [])
    with pytest.raises(AtomOutOfDomain):
        state_cell("data.C1", "Z", m11.env.domain("Values"))


def test_monitor(m11):
    lts = explore(m11.env, monitor("channel_claim.C1", "channel_release.C1"))
    claim, release = E("channel_claim", "C1", "W1"), E("channel_release", "C1", "W1")
    assert accepts(lts, [claim, release])
    assert not accepts(lts, [claim, E("channel_release", "C1", "R1")])
    assert E("channel_claim", "C1", "R1") not in offered(lts, [claim])
    assert E("channel_claim", "C1", "R1") in offered(lts, [claim, release])
    assert lts.num_states == 3  # idle plus one holder per pid


# ---------------------------------------------------------------- queues


@pytest.fixture(scope="module")
def queue_env(m11):
    env = m11.env
    env.channel("enq", "deq", signature=("Values",))
    env.channel("size", signature=("{0..2}",))
    return env


def test_queue_fifo(queue_env):
    lts = explore(queue_env, bounded_queue("enq", "deq", "size", 2))
    ea, eb, da, db = E("enq", "A"), E("enq", "B"), E("deq", "A"), E("deq", "B")
    assert accepts(lts, [ea, eb, da, db])
    assert not accepts(lts, [ea, eb, db])
    assert E("size", 2) in offered(lts, [ea, eb])
    assert offered(lts, [ea, eb]) == {E("size", 2), da}


def test_queue_capacity_one(queue_env):
    lts = explore(queue_env, bounded_queue("enq", "deq", "size", 1))
    assert E("enq", "B") not in offered(lts, [E("enq", "A")])
    assert E("enq", "B") in offered(lts, [E("enq", "A"), E("deq", "A")])


# ---------------------------------------------------------------- process metadata and schedulers


def test_process_metadata(m11):
    lts = explore(m11.env, process_metadata(("W1", "R1")))
    first = offered(lts, [])
    assert E("ready", "W1", "load", True) in first and E("ready", "W1", "load", False) not in first
    assert E("running", "W1", "load", False) in first and E("running", "W1", "load", True) not in first
    a = alphabet_of(Call("PROCESS", (Name("W1"),)), m11.env)
    b = alphabet_of(Call("PROCESS", (Name("R1"),)), m11.env)
    assert a and b and not (a & b)


def test_one_scheduler_runs_in_sequence(m11):
    lts = explore(m11.env, scheduler_system(1))
    pre = [E("schedule", "W1"), E("schedule", "R1"), E("run", "W1")]
    assert accepts(lts, pre)
    assert E("run", "R1") not in offered(lts, pre)
    assert E("run", "R1") in offered(lts, pre + [E("yield", "W1")])
    assert accepts(lts, [E("schedule", "W1"), E("run", "W1")])


def test_two_schedulers_run_concurrently(m11):
    lts = explore(m11.env, scheduler_system(2))
    both = [E("schedule", "W1"), E("schedule", "R1")]
    assert {E("run", "W1"), E("run", "R1")} <= offered(lts, both)
    assert accepts(lts, both + [E("run", "W1"), E("run", "R1")])
    assert accepts(lts, both + [E("run", "R1"), E("run", "W1")])


def _maximal_traces(lts, limit=40):
    """All complete runs of an acyclic fragment, as visible traces."""
    out = []
    stack = [(0, ())]
    while stack:
        s, tr = stack.pop()
        succ = lts.successors(s)
        if not succ:
            out.append(tr)
        for e, t in succ:
            stack.append((t, tr if e.kind == "tau" else tr + (e,)))
        assert len(tr) < limit
    return out


def test_schedule_on_ready_process_does_nothing(m11):
    frag = with_metadata(m11.env, runtime_action("schedule", "R1", "W1", Stop()), ("W1", "R1"))
    runs = _maximal_traces(explore(m11.env, frag))
    assert runs == [(
        E("claim_process", "W1", "R1"),
        E("ready", "W1", "load", True),
        E("release_process", "W1", "R1"),
    )]


def test_schedule_on_descheduled_process(m11):
    frag = emit(("ready", "W1", "store", False), runtime_action("schedule", "R1", "W1", Stop()))
    runs = _maximal_traces(explore(m11.env, with_metadata(m11.env, frag, ("W1", "R1"))))
    assert len(runs) == 1
    assert E("schedule", "W1") in runs[0]
    assert E("ready", "W1", "store", True) in runs[0]


def test_yield_order(m11):
    frag = with_metadata(m11.env, runtime_action("yield", "W1", Stop()), ("W1", "R1"))
    for run in _maximal_traces(explore(m11.env, frag)):
        assert run.index(E("yield", "W1")) < run.index(E("run", "W1"))
        assert run[-1] == E("running", "W1", "store", True)


def test_deschedule_of_ready_process_schedules_once(m11):
    frag = with_metadata(m11.env, runtime_action("deschedule", "W1", Stop()), ("W1", "R1"))
    runs = _maximal_traces(explore(m11.env, frag))
    assert runs and all(r.count(E("schedule", "W1")) == 1 for r in runs)


# ---------------------------------------------------------------- channels and primitives


CHANNEL_SYNC = ("writer", "reader", "data", "channel_claim", "channel_release")


def test_channel_core(m11):
    lts = explore(m11.env, channel_core("C1"))
    first = offered(lts, [])
    assert E("writer", "C1", "load", "NULL") in first
    assert E("data", "C1", "load", "A") in first
    claim = E("channel_claim", "C1", "W1")
    assert E("channel_claim", "C1", "R1") not in offered(lts, [claim])
    assert E("data", "C1", "load", "B") in offered(lts, [E("data", "C1", "store", "B")])
    assert E("data", "C1", "load", "A") not in offered(lts, [E("data", "C1", "store", "B")])


def test_write_starts_by_storing_data(m11):
    lts = explore(m11.env, comm_primitive(m11.cfg, "write", "W1", "C1", Name("A"), Stop()))
    assert [e for e, _ in lts.successors(0)] == [E("data", "C1", "store", "A")]


def test_read_without_writer_diverges(m11):
    frag = comm_primitive(m11.cfg, "read", "R1", "C1", Stop())
    sync = Productions(tuple(Name(c) for c in CHANNEL_SYNC))
    lts = explore(m11.env, GenParallel(frag, channel_core("C1"), sync))
    v = check_divergence_free(lts)
    assert not v.holds and v.counterexample.trace == (E("writer", "C1", "load", "NULL"),)


def test_write_then_read_delivers_and_wakes_writer(m11):
    env = m11.env
    deliver = Prefix(Name("data"), (Out(Name("C1"), False), Out(Name("load"), False), In("m")), Stop())
    frag = comm_primitive(m11.cfg, "write", "W1", "C1", Name("A"), comm_primitive(m11.cfg, "read", "R1", "C1", deliver))
    sync = Productions(tuple(Name(c) for c in CHANNEL_SYNC))
    system = with_metadata(env, GenParallel(frag, channel_core("C1"), sync), ("W1", "R1"))
    runs = _maximal_traces(explore(env, system))
    assert runs
    for run in runs:
        assert run[-1] == E("data", "C1", "load", "A")
        assert E("ready", "W1", "store", True) in run
        assert E("schedule", "W1") in run


def _end_system(m, frag):
    alpha = m.alphabets
    channel_names = sorted({e.channel for e in alpha.channels})
    sync = Productions(tuple(Name(c) for c in channel_names))
    return with_metadata(m.env, GenParallel(frag, shared_channel("C1", m.cfg.shape), sync), m.cfg.processes)


def test_claim_write_when_free(m21):
    runs = _maximal_traces(explore(m21.env, _end_system(m21, end_claim("claim_write", "W1", "C1", Stop()))))
    assert runs == [(
        E("channel_claim", "C1", "W1"),
        E("writeclaim", "C1", "load", "NULL"),
        E("writeclaim", "C1", "store", "W1"),
        E("channel_release", "C1", "W1"),
    )]


def test_claim_write_when_held_enqueues_and_yields(m21):
    frag = emit(("writeclaim", "C1", "store", "W2"), end_claim("claim_write", "W1", "C1", Stop()))
    runs = _maximal_traces(explore(m21.env, _end_system(m21, frag)))
    assert runs
    for run in runs:
        assert E("write_end_enqueue", "C1", "W1") in run
        assert run.index(E("channel_release", "C1", "W1")) < run.index(E("yield", "W1"))
        assert E("writeclaim", "C1", "store", "W1") not in run


def test_unclaim_write_hands_over(m21):
    frag = emit(("ready", "W2", "store", False), emit(("write_end_enqueue", "C1", "W2"),
                end_claim("unclaim_write", "W1", "C1", Stop())))
    runs = _maximal_traces(explore(m21.env, _end_system(m21, frag)))
    assert len(runs) == 1
    run = runs[0]
    order = [E("write_end_dequeue", "C1", "W2"), E("writeclaim", "C1", "store", "W2"), E("schedule", "W2"),
             E("channel_release", "C1", "W1")]
    assert [run.index(e) for e in order] == sorted(run.index(e) for e in order)


def test_unclaim_with_empty_queue_clears_claim(m21):
    runs = _maximal_traces(explore(m21.env, _end_system(m21, end_claim("unclaim_write", "W1", "C1", Stop()))))
    assert runs == [(
        E("channel_claim", "C1", "W1"),
        E("write_queue_size", "C1", 0),
        E("writeclaim", "C1", "store", "NULL"),
        E("channel_release", "C1", "W1"),
    )]


def _channels(env, p):
    return {e.channel for e in alphabet_of(p, env)}


def test_shared_channel_shapes(m22):
    env = m22.env
    m2o = _channels(env, shared_channel("C1", "many2one"))
    o2m = _channels(env, shared_channel("C1", "one2many"))
    m2m = _channels(env, shared_channel("C1", "many2many"))
    assert {"write_end_enqueue", "writeclaim"} <= m2o and not {"read_end_enqueue", "readclaim"} & m2o
    assert {"read_end_enqueue", "readclaim"} <= o2m and not {"write_end_enqueue", "writeclaim"} & o2m
    assert {"write_end_enqueue", "writeclaim", "read_end_enqueue", "readclaim"} <= m2m
    with pytest.raises(ShapeMismatch):
        shared_channel("C1", "one2one")


def test_end_queue_capacity(m22):
    lts = explore(m22.env, shared_channel("C1", "many2one"))
    enq = [E("write_end_enqueue", "C1", "W1")]
    # two writers: at most one can be queued behind the holder
    assert E("write_end_enqueue", "C1", "W2") not in offered(lts, enq)


# ---------------------------------------------------------------- processes, systems and specs


INTERFACE = {"write", "ack", "start_read", "read"}


def test_restricted_process_interfaces(m22):
    env = m22.env
    for shared in (False, True):
        w = alphabet_of(restricted_process("writer", shared, Name("W1")), env) & m22.alphabets.interface
        assert w == {E("write", "C1", "W1", v) for v in ("A", "B")} | {E("ack", "C1", "W1")}
        r = alphabet_of(restricted_process("reader", shared, Name("R1")), env) & m22.alphabets.interface
        assert r == {E("read", "C1", "R1", v) for v in ("A", "B")} | {E("start_read", "C1", "R1")}


def _walk(lts, rng, steps):
    s, out = 0, []
    for _ in range(steps):
        succ = lts.successors(s)
        if not succ:
            break
        e, s = rng.choice(succ)
        out.append(e)
    return out


def test_shared_writer_claims_around_each_communication(m21):
    lts = explore(m21.env, m21.instrumented)
    rng = random.Random(7)
    for _ in range(200):
        holder = "NULL"
        communicating = set()
        for e in _walk(lts, rng, 400):
            if e.channel == "writeclaim" and e.components[1] == "store":
                holder = e.components[2]
            elif e.channel == "writer" and e.components[1] == "store" and e.components[2] != "NULL":
                assert holder == e.components[2]
                communicating.add(holder)
            elif e.channel == "ack":
                w = e.components[1]
                assert w in communicating and holder != w
                communicating.discard(w)


@pytest.mark.parametrize("w, r", [(1, 1), (2, 1), (1, 2), (2, 2)])
def test_interface_purity(w, r):
    m = Model(ModelConfig.of(w, r, 1))
    impl, spec = alphabet_of(m.impl, m.env), alphabet_of(m.spec, m.env)
    assert impl == spec
    assert impl <= m.alphabets.interface
    assert {e.channel for e in impl} == INTERFACE
    assert all(e.components[1] in m.cfg.writers for e in impl if e.channel in ("write", "ack"))
    assert all(e.components[1] in m.cfg.readers for e in impl if e.channel in ("start_read", "read"))


def test_many_to_one_two_schedulers_trace_refines_one_way(m21):
    m = Model(ModelConfig.of(2, 1, 2))
    spec, impl = explore(m.env, m.spec), explore(m.env, m.impl)
    assert check_traces(spec, impl).holds
    assert not check_traces(impl, spec).holds


def test_spec_interaction_orderings(m11):
    lts = explore(m11.env, m11.spec)
    w, s, a, r = E("write", "C1", "W1", "A"), E("start_read", "C1", "R1"), E("ack", "C1", "W1"), E("read", "C1", "R1", "A")
    for order in ([w, s, a, r], [w, s, r, a], [s, w, a, r], [s, w, r, a]):
        assert accepts(lts, order)
    assert not accepts(lts, [w, a])
    b = E("write", "C1", "W1", "B")
    assert E("read", "C1", "R1", "B") in offered(lts, [b, s])
    assert E("read", "C1", "R1", "A") not in offered(lts, [b, s])


def test_spec_pairs_each_ack_with_a_transmit(m21):
    lts = explore(m21.env, m21.spec)
    pre = [E("write", "C1", "W1", "A"), E("write", "C1", "W2", "B"), E("start_read", "C1", "R1")]
    for value, acked, waiting in (("A", "W1", "W2"), ("B", "W2", "W1")):
        trace = pre + [E("read", "C1", "R1", value)]
        now = offered(lts, trace)
        assert E("ack", "C1", acked) in now and E("ack", "C1", waiting) not in now
    for t in traces_upto(lts, 6):
        acks = sum(e.channel == "ack" for e in t)
        assert acks <= sum(e.channel == "start_read" for e in t)
        assert acks <= sum(e.channel == "write" for e in t)


def test_store_wakeup_deadlocks():
    # the bare ready-flag store loses the wakeup
    m = Model(ModelConfig.of(1, 1, 1, wakeup="store"))
    v = check_deadlock_free(explore(m.env, m.impl))
    assert not v.holds
    m = Model(ModelConfig.of(1, 1, 1))
    assert check_deadlock_free(explore(m.env, m.impl)).holds


def test_div_marker_only_when_asked():
    plain = Model(ModelConfig.of(1, 1, 1))
    marked = Model(ModelConfig.of(1, 1, 1, mark_div=True))
    assert "diverge" not in plain.env.channels
    assert "diverge" in marked.env.channels
    assert check_divergence_free(explore(marked.env, marked.instrumented)).holds
