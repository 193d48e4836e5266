"""Process models of a cooperative-scheduler runtime and its shared channels.

Everything here builds ASTs over one :class:`Environment` produced by
:func:`model_environment`.  The runtime procedures (scheduling, yielding,
claiming a channel end, reading and writing) are Python functions taking the
continuation process and splicing it where the procedure would terminate, so
no sequential-composition steps appear in the state space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

from .errors import AtomOutOfDomain, ShapeMismatch
from .syntax import (
    DIV,
    AlphaParallel,
    BinOp,
    Call,
    Const,
    Dot,
    Environment,
    Event,
    Expr,
    ExtChoice,
    Func,
    GenParallel,
    Guard,
    Hide,
    IfThenElse,
    In,
    Interleave,
    Name,
    Out,
    Prefix,
    Proc,
    Productions,
    RangeSet,
    Replicated,
    SeqLit,
    SetLit,
    UnOp,
    ValueDomain,
    range_domain_name,
)

SHAPES = ("one2one", "many2one", "one2many", "many2many")
WAKEUP_MODES = ("schedule", "store")

# ---------------------------------------------------------------- AST helpers


def _x(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (bool, int)):
        return Const(v)
    return Name(v)


def ev(*parts) -> Expr:
    """Dotted reference ``a.b.c``; plain strings are names."""
    if len(parts) == 1:
        return _x(parts[0])
    return Dot(tuple(_x(p) for p in parts))


def then(target: Expr, cont: Proc, *fields) -> Proc:
    return Prefix(target, tuple(fields), cont)


def out(v) -> Out:
    return Out(_x(v))


def get(name: str, restrict: Expr | None = None) -> In:
    return In(name, restrict)


def call(name: str, *args) -> Call:
    return Call(name, tuple(_x(a) for a in args))


def eq(a, b) -> Expr:
    return BinOp("==", _x(a), _x(b))


def prods(*channels) -> Expr:
    return Productions(tuple(_x(c) if not isinstance(c, tuple) else ev(*c) for c in channels))


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class ModelConfig:
    """One shared-channel system: who writes, who reads, how many schedulers.

    ``wakeup`` picks how a channel operation re-readies its partner: by the
    full scheduling procedure (``"schedule"``) or by storing the partner's
    ready flag only (``"store"``), which can lose the wakeup.
    """

    shape: str
    writers: tuple
    readers: tuple
    channel: str = "C1"
    schedulers: int = 1
    values: tuple = ("A", "B")
    run_queue_capacity: int | None = None
    wakeup: str = "schedule"
    mark_div: bool = False

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ShapeMismatch(f"unknown shape {self.shape}")
        if not self.writers or not self.readers:
            raise ShapeMismatch("a channel needs at least one writer and one reader")
        if set(self.writers) & set(self.readers):
            raise ShapeMismatch("writer and reader ids must be disjoint")
        if len(set(self.writers)) != len(self.writers) or len(set(self.readers)) != len(self.readers):
            raise ShapeMismatch("duplicate process ids")
        many_w, many_r = len(self.writers) > 1, len(self.readers) > 1
        expected = {(False, False): "one2one", (True, False): "many2one", (False, True): "one2many", (True, True): "many2many"}
        if self.shape != expected[(many_w, many_r)]:
            raise ShapeMismatch(f"{self.shape} does not fit {len(self.writers)} writers and {len(self.readers)} readers")
        if self.schedulers < 1:
            raise ValueError("at least one scheduler is needed")
        if self.run_queue_capacity is not None and self.run_queue_capacity < len(self.processes):
            raise ValueError("run queue must hold every process")
        if self.wakeup not in WAKEUP_MODES:
            raise ValueError(f"unknown wakeup mode {self.wakeup}")

    @classmethod
    def of(cls, writers: int, readers: int, schedulers: int = 1, shape: str | None = None, **kw) -> "ModelConfig":
        if shape is None:
            shape = {(False, False): "one2one", (True, False): "many2one", (False, True): "one2many"}.get(
                (writers > 1, readers > 1), "many2many"
            )
        return cls(
            shape,
            tuple(f"W{i}" for i in range(1, writers + 1)),
            tuple(f"R{i}" for i in range(1, readers + 1)),
            schedulers=schedulers,
            **kw,
        )

    @property
    def processes(self) -> tuple:
        return self.writers + self.readers

    @property
    def shared_write(self) -> bool:
        return self.shape in ("many2one", "many2many")

    @property
    def shared_read(self) -> bool:
        return self.shape in ("one2many", "many2many")

    @property
    def capacity(self) -> int:
        return self.run_queue_capacity or len(self.processes)

    @property
    def label(self) -> str:
        return f"{len(self.writers)}-{len(self.readers)}"

    def with_schedulers(self, n: int) -> "ModelConfig":
        return ModelConfig(
            self.shape, self.writers, self.readers, self.channel, n, self.values, self.run_queue_capacity, self.wakeup, self.mark_div
        )


# ---------------------------------------------------------------- environment


def model_environment(cfg: ModelConfig) -> Environment:
    """Datatypes, channels and every process definition for ``cfg``."""
    env = Environment()
    env.datatype("Nullable_Processes", ("NULL",) + cfg.processes)
    env.subtype("Processes", cfg.processes)
    env.subtype("Reading_Processes", cfg.readers)
    env.subtype("Writing_Processes", cfg.writers)
    env.subtype("Nullable_Reading_Processes", ("NULL",) + cfg.readers)
    env.subtype("Nullable_Writing_Processes", ("NULL",) + cfg.writers)
    env.datatype("Channels", (cfg.channel,))
    env.datatype("Values", cfg.values)
    env.datatype("Operations", ("load", "store"))

    env.channel("ready", "running", signature=("Processes", "Operations", "Bool"))
    env.channel("claim_process", "release_process", signature=("Processes", "Processes"))
    env.channel("schedule", "run", "yield", signature=("Processes",))
    env.channel("rqenqueue", "rqdequeue", signature=("Processes",))
    env.channel("rqsize", signature=(range_domain_name(0, cfg.capacity),))
    env.channel("read", "write", signature=("Channels", "Processes", "Values"))
    env.channel("start_read", "ack", signature=("Channels", "Processes"))
    env.channel("transmit", signature=("Channels", "Values"))
    env.channel("writer", "reader", signature=("Channels", "Operations", "Nullable_Processes"))
    env.channel("data", signature=("Channels", "Operations", "Values"))
    env.channel("channel_claim", "channel_release", signature=("Channels", "Processes"))
    if cfg.shared_write:
        env.channel("write_end_enqueue", "write_end_dequeue", signature=("Channels", "Writing_Processes"))
        env.channel("write_queue_size", signature=("Channels", range_domain_name(0, len(cfg.writers) - 1)))
        env.channel("writeclaim", signature=("Channels", "Operations", "Nullable_Writing_Processes"))
    if cfg.shared_read:
        env.channel("read_end_enqueue", "read_end_dequeue", signature=("Channels", "Reading_Processes"))
        env.channel("read_queue_size", signature=("Channels", range_domain_name(0, len(cfg.readers) - 1)))
        env.channel("readclaim", signature=("Channels", "Operations", "Nullable_Reading_Processes"))
    if cfg.mark_div:
        env.channel("diverge", signature=("Channels", "Processes"))

    _define_runtime(env, cfg)
    _define_channels(env, cfg)
    _define_processes(env, cfg)
    _define_specs(env)
    return env


def _define_runtime(env: Environment, cfg: ModelConfig) -> None:
    env.define(
        "VARIABLE",
        ("var", "val"),
        ExtChoice(
            (
                then(ev("var", "load"), call("VARIABLE", "var", "val"), out("val")),
                then(ev("var", "store"), call("VARIABLE", "var", "val"), get("val")),
            )
        ),
    )
    env.define("MONITOR", ("claim", "release"), then(ev("claim"), then(ev("release", "pid"), call("MONITOR", "claim", "release")), get("pid")))
    env.define("QUEUE", ("enqueue", "dequeue", "size", "q", "CAP"), _queue_body())
    env.define(
        "PROCESS",
        ("p",),
        Interleave(
            (
                call("VARIABLE", ev("ready", "p"), True),
                call("VARIABLE", ev("running", "p"), False),
                call("MONITOR", ev("claim_process", "p"), ev("release_process", "p")),
            )
        ),
    )
    env.define("PROCESSES", (), Replicated("|||", "p", Name("Processes"), call("PROCESS", "p")))
    env.define("SCHEDULER", (), then(ev("rqdequeue"), then(ev("run", "p"), then(ev("yield", "p"), call("SCHEDULER"))), get("p")))
    env.define("SCHEDULE_MANAGER", (), then(ev("schedule"), then(ev("rqenqueue"), call("SCHEDULE_MANAGER"), out("pid")), get("pid")))
    runqueue = prods("rqenqueue", "rqdequeue", "rqsize")
    cap = Func("card", (Name("Processes"),)) if cfg.run_queue_capacity is None else Const(cfg.run_queue_capacity)
    env.define(
        "SCHEDULERS",
        ("N",),
        Hide(
            GenParallel(
                Interleave((Replicated("|||", "n", RangeSet(Const(1), Name("N")), call("SCHEDULER")), call("SCHEDULE_MANAGER"))),
                call("QUEUE", "rqenqueue", "rqdequeue", "rqsize", SeqLit(()), cap),
                runqueue,
            ),
            runqueue,
        ),
    )
    env.define(
        "N_SCHEDULER_SYSTEM",
        ("N",),
        AlphaParallel(call("SCHEDULERS", "N"), alpha_scheduling(), alpha_processes(), call("PROCESSES")),
    )


def _queue_body() -> Proc:
    q = Name("q")
    length = UnOp("#", q)
    return ExtChoice(
        (
            Guard(
                BinOp("<", length, Name("CAP")),
                then(ev("enqueue"), call("QUEUE", "enqueue", "dequeue", "size", BinOp("^", q, SeqLit((Name("v"),))), "CAP"), get("v")),
            ),
            Guard(
                BinOp(">", length, Const(0)),
                then(ev("dequeue"), call("QUEUE", "enqueue", "dequeue", "size", Func("tail", (q,)), "CAP"), Out(Func("head", (q,)))),
            ),
            # the size branch recurses with the original channel arguments
            then(ev("size"), call("QUEUE", "enqueue", "dequeue", "size", q, "CAP"), Out(length)),
        )
    )


# ---------------------------------------------------------------- alphabets


def alpha_runqueue() -> Expr:
    return prods("rqenqueue", "rqdequeue", "rqsize")


def alpha_scheduling() -> Expr:
    return prods("schedule", "run", "yield")


def alpha_processes() -> Expr:
    return prods("ready", "running", "claim_process", "release_process")


def alpha_n_scheduler_system() -> Expr:
    return prods("schedule", "run", "yield", "ready", "running", "claim_process", "release_process")


CHANNEL_INTERNALS = (
    "channel_claim",
    "channel_release",
    "writer",
    "reader",
    "data",
    "writeclaim",
    "readclaim",
    "write_end_enqueue",
    "write_end_dequeue",
    "read_end_enqueue",
    "read_end_dequeue",
    "write_queue_size",
    "read_queue_size",
)
SCHEDULING_INTERNALS = ("schedule", "run", "yield", "ready", "running", "claim_process", "release_process")
RUNQUEUE_INTERNALS = ("rqenqueue", "rqdequeue", "rqsize")
INTERFACE = ("write", "ack", "start_read", "read")


def alpha_channels(env: Environment) -> Expr:
    return prods(*(c for c in CHANNEL_INTERNALS if c in env.channels))


@dataclass(frozen=True)
class AlphabetSet:
    """Concrete event sets of one configuration."""

    processes: frozenset
    scheduling: frozenset
    runqueue: frozenset
    channels: frozenset
    n_scheduler_system: frozenset
    interface: frozenset


def alphabets(env: Environment) -> AlphabetSet:
    def of(names):
        return frozenset(e for c in names if c in env.channels for e in env.events_of(c))

    return AlphabetSet(
        processes=of(("ready", "running", "claim_process", "release_process")),
        scheduling=of(("schedule", "run", "yield")),
        runqueue=of(RUNQUEUE_INTERNALS),
        channels=of(CHANNEL_INTERNALS),
        n_scheduler_system=of(SCHEDULING_INTERNALS),
        interface=of(INTERFACE),
    )


# ---------------------------------------------------------------- runtime procedures


def schedule(me, pid, k: Proc) -> Proc:
    """Make ``pid`` ready, queueing it unless it is still running."""
    me, pid = _x(me), _x(pid)
    release = then(ev("release_process", pid, me), k)
    return then(
        ev("claim_process", pid, me),
        then(
            ev("ready", pid, "load"),
            IfThenElse(
                Name("r"),
                release,
                then(
                    ev("ready", pid, "store"),
                    then(
                        ev("running", pid, "load"),
                        IfThenElse(Name("r2"), release, then(ev("schedule", pid), release)),
                        get("r2"),
                    ),
                    out(True),
                ),
            ),
            get("r"),
        ),
    )


def deschedule(pid, k: Proc) -> Proc:
    pid = _x(pid)
    release = then(ev("release_process", pid, pid), k)
    return then(
        ev("claim_process", pid, pid),
        then(
            ev("running", pid, "store", False),
            then(ev("ready", pid, "load"), IfThenElse(Name("r"), then(ev("schedule", pid), release), release), get("r")),
        ),
    )


def yield_(pid, k: Proc) -> Proc:
    pid = _x(pid)
    return deschedule(pid, then(ev("yield", pid), then(ev("run", pid), then(ev("running", pid, "store"), k, out(True)))))


def runtime_action(kind: str, *args) -> Proc:
    """``runtime_action("schedule", me, pid, k)``, ``("deschedule", pid, k)`` or ``("yield", pid, k)``."""
    table = {"schedule": schedule, "deschedule": deschedule, "yield": yield_}
    try:
        fn = table[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown runtime action {kind}") from None
    return fn(*args)


def _wake(cfg: ModelConfig, me, other, k: Proc) -> Proc:
    if cfg.wakeup == "schedule":
        return schedule(me, other, k)
    return then(ev("ready", other, "store"), k, out(True))


def read_op(cfg: ModelConfig, pid, chan, k: Proc) -> Proc:
    """Complete a read: wake the writer and clear both references."""
    pid, chan = _x(pid), _x(chan)
    rest = then(ev("writer", chan, "store"), then(ev("reader", chan, "store"), k, out("NULL")), out("NULL"))
    never = then(ev("diverge", chan, pid), DIV) if cfg.mark_div else DIV
    return then(ev("writer", chan, "load"), IfThenElse(eq("w", "NULL"), never, _wake(cfg, pid, Name("w"), rest)), get("w"))


def write_op(cfg: ModelConfig, pid, chan, item, k: Proc) -> Proc:
    """Deposit ``item``, register as writer, and wake a waiting reader."""
    pid, chan = _x(pid), _x(chan)
    check = then(
        ev("reader", chan, "load"),
        IfThenElse(BinOp("!=", Name("v"), Name("NULL")), _wake(cfg, pid, Name("v"), k), k),
        get("v"),
    )
    return then(
        ev("data", chan, "store"),
        then(ev("writer", chan, "store"), then(ev("ready", pid, "store"), check, out(False)), out(pid)),
        out(item),
    )


def comm_primitive(cfg: ModelConfig, kind: str, *args) -> Proc:
    """``("read", pid, chan, k)`` or ``("write", pid, chan, item, k)``."""
    if kind.lower() == "read":
        return read_op(cfg, *args)
    if kind.lower() == "write":
        return write_op(cfg, *args)
    raise ValueError(f"unknown primitive {kind}")


_END = {
    "write": ("writeclaim", "write_end_enqueue", "write_end_dequeue", "write_queue_size"),
    "read": ("readclaim", "read_end_enqueue", "read_end_dequeue", "read_queue_size"),
}


def claim_end(side: str, pid, chan, k: Proc) -> Proc:
    """Take the shared end, or queue up and yield until handed the claim."""
    claim, enq, _, _ = _END[side]
    pid, chan = _x(pid), _x(chan)
    release = ev("channel_release", chan, pid)
    return then(
        ev("channel_claim", chan),
        then(
            ev(claim, chan, "load"),
            IfThenElse(
                BinOp("or", eq("wc", "NULL"), eq("wc", pid)),
                then(ev(claim, chan, "store"), then(release, k), out(pid)),
                then(ev("ready", pid, "store"), then(ev(enq, chan, pid), then(release, yield_(pid, k))), out(False)),
            ),
            get("wc"),
        ),
        out(pid),
    )


def unclaim_end(side: str, pid, chan, k: Proc) -> Proc:
    """Give up the shared end, handing it to the first queued process if any."""
    claim, _, deq, size = _END[side]
    pid, chan = _x(pid), _x(chan)
    release = then(ev("channel_release", chan, pid), k)
    return then(
        ev("channel_claim", chan),
        then(
            ev(size, chan),
            IfThenElse(
                eq("s", 0),
                then(ev(claim, chan, "store"), release, out("NULL")),
                then(ev(deq, chan), then(ev(claim, chan, "store"), schedule(pid, Name("p"), release), out("p")), get("p")),
            ),
            get("s"),
        ),
        out(pid),
    )


def end_claim(kind: str, pid, chan, k: Proc) -> Proc:
    """``kind`` is one of claim_write, unclaim_write, claim_read, unclaim_read."""
    kind = kind.lower()
    if kind == "claim_write":
        return claim_end("write", pid, chan, k)
    if kind == "unclaim_write":
        return unclaim_end("write", pid, chan, k)
    if kind == "claim_read":
        return claim_end("read", pid, chan, k)
    if kind == "unclaim_read":
        return unclaim_end("read", pid, chan, k)
    raise ValueError(f"unknown claim kind {kind}")


# ---------------------------------------------------------------- channels


def _define_channels(env: Environment, cfg: ModelConfig) -> None:
    env.define(
        "CHANNEL",
        ("chan",),
        Interleave(
            (
                call("VARIABLE", ev("writer", "chan"), "NULL"),
                call("VARIABLE", ev("reader", "chan"), "NULL"),
                call("VARIABLE", ev("data", "chan"), cfg.values[0]),
                call("MONITOR", ev("channel_claim", "chan"), ev("channel_release", "chan")),
            )
        ),
    )
    write_end = (
        call("QUEUE", ev("write_end_enqueue", "c"), ev("write_end_dequeue", "c"), ev("write_queue_size", "c"), SeqLit(()), _card_minus_one("Writing_Processes")),
        call("VARIABLE", ev("writeclaim", "c"), "NULL"),
    )
    read_end = (
        call("QUEUE", ev("read_end_enqueue", "c"), ev("read_end_dequeue", "c"), ev("read_queue_size", "c"), SeqLit(()), _card_minus_one("Reading_Processes")),
        call("VARIABLE", ev("readclaim", "c"), "NULL"),
    )
    if cfg.shared_write:
        env.define("MANY_TO_ONE_CHANNEL", ("c",), Interleave((call("CHANNEL", "c"),) + write_end))
    if cfg.shared_read:
        env.define("ONE_TO_MANY_CHANNEL", ("c",), Interleave((call("CHANNEL", "c"),) + read_end))
    if cfg.shared_write and cfg.shared_read:
        env.define("MANY_TO_MANY_CHANNEL", ("c",), Interleave((call("CHANNEL", "c"),) + write_end + read_end))


def _card_minus_one(domain: str) -> Expr:
    return BinOp("-", Func("card", (Name(domain),)), Const(1))


def channel_core(chan) -> Proc:
    return call("CHANNEL", chan)


def shared_channel(chan, shape: str) -> Proc:
    names = {"many2one": "MANY_TO_ONE_CHANNEL", "one2many": "ONE_TO_MANY_CHANNEL", "many2many": "MANY_TO_MANY_CHANNEL"}
    if shape not in names:
        raise ShapeMismatch(f"{shape} is not a shared-channel shape")
    return call(names[shape], chan)


def _channel_for(cfg: ModelConfig) -> Proc:
    if cfg.shape == "one2one":
        return channel_core(cfg.channel)
    return shared_channel(cfg.channel, cfg.shape)


# ---------------------------------------------------------------- processes


def _define_processes(env: Environment, cfg: ModelConfig) -> None:
    pid, chan = Name("pid"), Name("chan")
    startup = lambda loop: then(ev("schedule", pid), then(ev("run", pid), then(ev("running", pid, "store"), call(loop, pid, chan), out(True))))
    for shared in (False, True):
        if shared and not cfg.shared_write:
            continue
        base = "RESTRICTED_PROCESS_SHARED_WRITER" if shared else "RESTRICTED_PROCESS_WRITER"
        loop = base + "'"
        tail = then(ev("ack", chan, pid), call(loop, pid, chan))
        if shared:
            tail = unclaim_end("write", pid, chan, tail)
        body = then(ev("channel_claim", chan), write_op(cfg, pid, chan, Name("message"), then(ev("channel_release", chan, pid), yield_(pid, tail))), out(pid))
        if shared:
            body = claim_end("write", pid, chan, body)
        env.define(base, ("pid", "chan"), startup(loop))
        env.define(loop, ("pid", "chan"), then(ev("write", chan, pid), body, get("message")))
    for shared in (False, True):
        if shared and not cfg.shared_read:
            continue
        base = "RESTRICTED_PROCESS_SHARED_READER" if shared else "RESTRICTED_PROCESS_READER"
        loop = base + "'"
        finish = yield_(pid, then(ev("read", chan, pid), call(loop, pid, chan), out("message")))
        if shared:
            # the courtesy yield comes after giving up the end
            finish = unclaim_end("read", pid, chan, finish)
        second = then(
            ev("channel_claim", chan),
            read_op(cfg, pid, chan, then(ev("data", chan, "load"), then(ev("channel_release", chan, pid), finish), get("message"))),
            out(pid),
        )
        first = then(
            ev("channel_claim", chan),
            then(
                ev("writer", chan, "load"),
                IfThenElse(
                    eq("p", "NULL"),
                    then(
                        ev("reader", chan, "store", pid),
                        then(ev("ready", pid, "store"), then(ev("channel_release", chan, pid), yield_(pid, second)), out(False)),
                    ),
                    then(ev("channel_release", chan, pid), second),
                ),
                get("p"),
            ),
            out(pid),
        )
        if shared:
            first = claim_end("read", pid, chan, first)
        env.define(base, ("pid", "chan"), startup(loop))
        env.define(loop, ("pid", "chan"), then(ev("start_read", chan, pid), first))

    writer = "RESTRICTED_PROCESS_SHARED_WRITER" if cfg.shared_write else "RESTRICTED_PROCESS_WRITER"
    reader = "RESTRICTED_PROCESS_SHARED_READER" if cfg.shared_read else "RESTRICTED_PROCESS_READER"
    env.define(
        "RESTRICTED_PROCESSES",
        ("C",),
        Interleave(
            (
                Replicated("|||", "p", Name("Writing_Processes"), call(writer, "p", "C")),
                Replicated("|||", "p", Name("Reading_Processes"), call(reader, "p", "C")),
            )
        ),
    )
    alpha_ch = alpha_channels(env)
    env.define("RESTRICTED_CHANNEL_SYSTEM", ("C",), Hide(GenParallel(call("RESTRICTED_PROCESSES", "C"), _channel_for(cfg), alpha_ch), alpha_ch))
    alpha_nss = alpha_n_scheduler_system()
    name = system_name(cfg)
    env.define(
        name,
        ("C", "N"),
        Hide(GenParallel(call("RESTRICTED_CHANNEL_SYSTEM", "C"), call("N_SCHEDULER_SYSTEM", "N"), alpha_nss), alpha_nss),
    )
    # the same network with nothing hidden, used for exploration and property checks
    env.define(
        "INSTRUMENTED_SYSTEM",
        ("C", "N"),
        GenParallel(GenParallel(call("RESTRICTED_PROCESSES", "C"), _channel_for(cfg), alpha_ch), call("N_SCHEDULER_SYSTEM", "N"), alpha_nss),
    )


def system_name(cfg: ModelConfig) -> str:
    return {
        "one2one": "RESTRICTED_PJ_ONE_TO_ONE_CHAN_SYSTEM",
        "many2one": "RESTRICTED_PJ_MANY_TO_ONE_CHAN_SYSTEM",
        "one2many": "RESTRICTED_PJ_ONE_TO_MANY_CHAN_SYSTEM",
        "many2many": "RESTRICTED_PJ_MANY_TO_MANY_CHAN_SYSTEM",
    }[cfg.shape]


# ---------------------------------------------------------------- specification


def _define_specs(env: Environment) -> None:
    pid, chan = Name("pid"), Name("chan")
    env.define(
        "LEFT",
        ("pid", "chan"),
        then(ev("write", chan, pid), then(ev("transmit", chan), then(ev("ack", chan, pid), call("LEFT", pid, chan)), out("mess")), get("mess")),
    )
    env.define(
        "RIGHT",
        ("pid", "chan"),
        then(ev("start_read", chan, pid), then(ev("transmit", chan), then(ev("read", chan, pid), call("RIGHT", pid, chan), out("mess")), get("mess"))),
    )
    tx = prods("transmit")
    env.define(
        "GENERIC_CHANNEL",
        ("W", "R", "C"),
        Hide(
            AlphaParallel(
                call("LEFT", "W", "C"),
                Productions((ev("write", "C", "W"), ev("transmit", "C"), ev("ack", "C", "W"))),
                Productions((ev("start_read", "C", "R"), ev("transmit", "C"), ev("read", "C", "R"))),
                call("RIGHT", "R", "C"),
            ),
            tx,
        ),
    )
    env.define(
        "N_TO_M_GENERIC_CHANNEL",
        ("writers", "readers", "C"),
        Hide(
            GenParallel(
                Replicated("|||", "p", Name("writers"), call("LEFT", "p", "C")),
                Replicated("|||", "p", Name("readers"), call("RIGHT", "p", "C")),
                tx,
            ),
            tx,
        ),
    )


def generic_channel_spec(writers, readers, chan="C1") -> Proc:
    return call(
        "N_TO_M_GENERIC_CHANNEL",
        SetLit(tuple(_x(w) for w in writers)),
        SetLit(tuple(_x(r) for r in readers)),
        chan,
    )


# ---------------------------------------------------------------- constructors named after the model parts


def state_cell(var_channel, init, domain: ValueDomain | None = None) -> Proc:
    if domain is not None and init not in domain:
        raise AtomOutOfDomain(f"{init} is not in {domain.name}")
    target = var_channel if isinstance(var_channel, Expr) else ev(*var_channel.split(".")) if isinstance(var_channel, str) else ev(*var_channel)
    return call("VARIABLE", target, init)


def monitor(claim_ch, release_ch) -> Proc:
    return call("MONITOR", _chan_ref(claim_ch), _chan_ref(release_ch))


def bounded_queue(enq, deq, size_ch, capacity: int) -> Proc:
    if capacity < 1:
        raise ValueError("capacity must be at least 1")
    return call("QUEUE", _chan_ref(enq), _chan_ref(deq), _chan_ref(size_ch), SeqLit(()), capacity)


def process_metadata(pids) -> Proc:
    pids = tuple(pids)
    if not pids:
        raise ValueError("no processes")
    return Replicated("|||", "p", SetLit(tuple(_x(p) for p in pids)), call("PROCESS", "p"))


def scheduler_system(n: int, cfg: ModelConfig | None = None) -> Proc:
    if n < 1:
        raise ValueError("at least one scheduler is needed")
    return call("N_SCHEDULER_SYSTEM", n)


def restricted_process(role: str, shared: bool, pid, chan="C1") -> Proc:
    role = role.lower()
    if role not in ("writer", "reader"):
        raise ValueError(f"unknown role {role}")
    name = "RESTRICTED_PROCESS_" + ("SHARED_" if shared else "") + role.upper()
    return call(name, pid, chan)


def restricted_system(cfg: ModelConfig) -> Proc:
    return call(system_name(cfg), cfg.channel, cfg.schedulers)


def instrumented_system(cfg: ModelConfig) -> Proc:
    """:func:`restricted_system` with every internal event left visible."""
    return call("INSTRUMENTED_SYSTEM", cfg.channel, cfg.schedulers)


def _chan_ref(c) -> Expr:
    if isinstance(c, Expr):
        return c
    if isinstance(c, Event):
        return Const(c)
    if isinstance(c, str):
        return ev(*c.split("."))
    return ev(*c)


# ---------------------------------------------------------------- bundles


@dataclass
class Model:
    """Environment plus the specification and implementation roots of a config."""

    cfg: ModelConfig
    env: Environment = field(init=False)

    def __post_init__(self):
        self.env = model_environment(self.cfg)

    @cached_property
    def spec(self) -> Proc:
        return generic_channel_spec(self.cfg.writers, self.cfg.readers, self.cfg.channel)

    @cached_property
    def impl(self) -> Proc:
        return restricted_system(self.cfg)

    @cached_property
    def instrumented(self) -> Proc:
        return instrumented_system(self.cfg)

    @cached_property
    def alphabets(self) -> AlphabetSet:
        return alphabets(self.env)

    @property
    def hidden(self) -> frozenset:
        a = self.alphabets
        return a.channels | a.n_scheduler_system


# rows of the results table: (shape, writers, readers)
TABLE_ROWS = (
    ("one2many", 1, 2),
    ("one2many", 1, 3),
    ("many2one", 2, 1),
    ("many2one", 3, 1),
    ("many2many", 2, 2),
)
