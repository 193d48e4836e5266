"""Normalization and refinement checking over explored transition systems.

Every check runs a breadth-first search in which a layer is a visible trace
length: τ-successors join the current layer and visible successors seed the
next one.  The first violation found is therefore reached by a shortest
trace, and ties go to the lower event (edges are sorted by label).

Event sets are handled as bitsets over label indices of the specification
LTS, so acceptance tests are a few word operations per state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit

from .semantics import LTS, TAU_LABEL, TICK_LABEL
from .syntax import Event


class SemanticModel(Enum):
    TRACES = "traces"
    FAILURES = "failures"
    FD = "fd"

    @property
    def tag(self) -> str:
        return {"traces": "T", "failures": "F", "fd": "FD"}[self.value]

    @classmethod
    def parse(cls, text) -> "SemanticModel":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        aliases = {"t": "traces", "f": "failures", "failures-divergences": "fd"}
        return cls(aliases.get(key, key))


_MODEL_CODE = {SemanticModel.TRACES: 0, SemanticModel.FAILURES: 1, SemanticModel.FD: 2}


# ---------------------------------------------------------------- verdicts


@dataclass(frozen=True)
class IllegalEvent:
    event: Event

    def __str__(self):
        return f"illegal event {self.event}"


@dataclass(frozen=True)
class IllegalRefusal:
    refused: frozenset

    def __str__(self):
        return "illegal refusal {" + ", ".join(map(str, sorted(self.refused))) + "}"


@dataclass(frozen=True)
class IllegalDivergence:
    def __str__(self):
        return "illegal divergence"


@dataclass(frozen=True)
class Deadlock:
    def __str__(self):
        return "deadlock"


@dataclass(frozen=True)
class Nondeterminism:
    """``event`` can be both performed and refused after the trace."""

    event: Event

    def __str__(self):
        return f"may accept or refuse {self.event}"


@dataclass(frozen=True)
class Counterexample:
    trace: tuple
    witness: object
    state: int = -1

    def __str__(self):
        return "<" + ", ".join(map(str, self.trace)) + "> " + str(self.witness)


@dataclass
class Verdict:
    holds: bool
    model: SemanticModel | None = None
    counterexample: Counterexample | None = None
    stats: dict = field(default_factory=dict)

    def __bool__(self):
        return self.holds

    def __str__(self):
        head = "holds" if self.holds else "fails"
        if self.model is not None:
            head += f" [{self.model.tag}]"
        if self.counterexample is not None:
            head += f": {self.counterexample}"
        return head


RefinementVerdict = Verdict


# ---------------------------------------------------------------- divergence


def _components(lts: LTS) -> tuple:
    cached = getattr(lts, "_tau_components", None)
    if cached is None:
        cached = _tau_scc(lts.offsets, lts.labels, lts.targets)
        lts._tau_components = cached
        lts.divergent = cached[3]
    return cached


def divergence_marks(lts: LTS) -> tuple:
    """``(on_cycle, divergent)`` boolean arrays; cached on ``lts``.

    A state is on a cycle when it lies in a nontrivial τ-component or has a
    τ self-loop, and divergent when it can reach such a state by τ edges.
    """
    comps = _components(lts)
    return comps[2], comps[3]


@njit(cache=True)
def _tau_scc(offsets, labels, targets):
    """Iterative Tarjan over τ edges.

    Components are numbered in completion order, so every τ edge between
    distinct components goes from a higher to a lower number.
    """
    n = len(offsets) - 1
    comp = np.empty(n, dtype=np.int32)
    n_comp = 0
    index = np.full(n, -1, dtype=np.int32)
    low = np.zeros(n, dtype=np.int32)
    on_stack = np.zeros(n, dtype=np.bool_)
    on_cycle = np.zeros(n, dtype=np.bool_)
    divergent = np.zeros(n, dtype=np.bool_)
    scc_stack = np.empty(n, dtype=np.int32)
    call_node = np.empty(n, dtype=np.int32)
    call_edge = np.empty(n, dtype=np.int64)
    sp = 0
    counter = 0
    for start in range(n):
        if index[start] != -1:
            continue
        depth = 0
        call_node[0] = start
        call_edge[0] = offsets[start]
        index[start] = low[start] = counter
        counter += 1
        scc_stack[sp] = start
        sp += 1
        on_stack[start] = True
        while depth >= 0:
            v = call_node[depth]
            k = call_edge[depth]
            pushed = False
            while k < offsets[v + 1]:
                if labels[k] != 0:
                    k += 1
                    continue
                w = targets[k]
                k += 1
                if index[w] == -1:
                    call_edge[depth] = k
                    depth += 1
                    call_node[depth] = w
                    call_edge[depth] = offsets[w]
                    index[w] = low[w] = counter
                    counter += 1
                    scc_stack[sp] = w
                    sp += 1
                    on_stack[w] = True
                    pushed = True
                    break
                if on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
            if pushed:
                continue
            if low[v] == index[v]:
                # pop the component; its τ-successors outside it are finished
                first = sp - 1
                while scc_stack[first] != v:
                    first -= 1
                size = sp - first
                cyclic = size > 1
                div = False
                for q in range(first, sp):
                    u = scc_stack[q]
                    for e in range(offsets[u], offsets[u + 1]):
                        if labels[e] != 0:
                            continue
                        w = targets[e]
                        if w == u:
                            cyclic = True
                        elif not on_stack[w] and divergent[w]:
                            div = True
                for q in range(first, sp):
                    u = scc_stack[q]
                    on_stack[u] = False
                    on_cycle[u] = cyclic
                    divergent[u] = cyclic or div
                    comp[u] = n_comp
                n_comp += 1
                sp = first
            depth -= 1
            if depth >= 0:
                u = call_node[depth]
                if low[v] < low[u]:
                    low[u] = low[v]
    return comp, n_comp, on_cycle, divergent


# ---------------------------------------------------------------- reduction

# above this size a specification is quotiented before subset construction
REDUCE_THRESHOLD = 20_000


def branching_quotient(lts: LTS) -> LTS:
    """Quotient by divergence-sensitive branching bisimilarity.

    Traces, stable failures and divergences are all preserved, so any check
    may run on the quotient instead.  Hidden interleavings of internal steps
    collapse here, which is what keeps subset construction of large
    implementations affordable.  States of the result are numbered in
    breadth-first order from the root block.
    """
    cached = getattr(lts, "_quotient", None)
    if cached is not None:
        return cached
    comp, n_comp, on_cycle, _ = _components(lts)
    offsets, labels, targets = lts.offsets, lts.labels, lts.targets
    n = lts.num_states
    if n_comp < n:
        # fold each τ-cycle into one state first; the τ-graph is then acyclic
        src = np.repeat(comp, np.diff(offsets))
        dst = comp[targets]
        keep = (labels != TAU_LABEL) | (src != dst)
        cyc = np.zeros(n_comp, dtype=np.bool_)
        cyc[comp[on_cycle]] = True
        members = comp
        folded = _csr(n_comp, src[keep], labels[keep], dst[keep])
        offsets, labels, targets = folded
        order = np.arange(n_comp, dtype=np.int32)
        div = cyc
    else:
        members = np.arange(n)
        order = np.empty(n, dtype=np.int32)
        order[comp] = np.arange(n, dtype=np.int32)
        div = on_cycle
    blk = np.zeros(len(offsets) - 1, dtype=np.int32)
    n_blocks = 1
    delta_label = len(lts.events)
    while True:
        new_blk, n_new = _signature_round(offsets, labels, targets, order, blk, n_blocks, div, delta_label)
        if n_new == n_blocks:
            break
        blk, n_blocks = new_blk, n_new
    q_src, q_lab, q_dst = _quotient_edges(offsets, labels, targets, blk, n_blocks, div, len(lts.events))
    state_blk = blk[members]
    root = int(state_blk[lts.root])
    # renumber blocks breadth-first from the root block
    q = _csr(n_blocks, q_src, q_lab, q_dst)
    rank = _bfs_rank(q[0], q[2], root)
    rep = np.zeros(n_blocks, dtype=np.int64)
    rep[state_blk[::-1]] = np.arange(n - 1, -1, -1)
    new_rep = np.zeros(n_blocks, dtype=np.int64)
    new_rep[rank] = rep
    offsets2, labels2, targets2 = _csr(n_blocks, rank[q_src], q_lab, rank[q_dst])

    def names(b: int) -> str:
        return lts.describe(int(new_rep[b]))

    out = LTS(lts.events, offsets2, labels2, targets2, names)
    out.block_of = rank[state_blk]
    out.source_states = n
    out.representative = new_rep
    lts._quotient = out
    return out


def _csr(n, src, lab, dst) -> tuple:
    order = np.lexsort((dst, lab, src))
    src, lab, dst = src[order], lab[order], dst[order]
    if len(src):
        keep = np.ones(len(src), dtype=np.bool_)
        keep[1:] = (src[1:] != src[:-1]) | (lab[1:] != lab[:-1]) | (dst[1:] != dst[:-1])
        src, lab, dst = src[keep], lab[keep], dst[keep]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
    return offsets, lab.astype(np.int32), dst.astype(np.int32)


@njit(cache=True)
def _bfs_rank(offsets, targets, root):
    n = len(offsets) - 1
    rank = np.full(n, -1, dtype=np.int32)
    queue = np.empty(n, dtype=np.int32)
    rank[root] = 0
    queue[0] = root
    head, tail = 0, 1
    while head < tail:
        u = queue[head]
        head += 1
        for e in range(offsets[u], offsets[u + 1]):
            t = targets[e]
            if rank[t] == -1:
                rank[t] = tail
                queue[tail] = t
                tail += 1
    # blocks are all reachable from the root block, but stay total anyway
    for u in range(n):
        if rank[u] == -1:
            rank[u] = tail
            tail += 1
    return rank


@njit(cache=True)
def _sig_hash(b, sig, lo, hi):
    h = np.uint64(b) * np.uint64(0x9E3779B97F4A7C15)
    for i in range(lo, hi):
        h = (h ^ np.uint64(sig[i])) * np.uint64(1099511628211)
        h ^= h >> np.uint64(29)
    return h


@njit(cache=True)
def _signature_round(offsets, labels, targets, order, blk, n_blocks, div, delta_label):
    """One refinement step: the new block of a state is its old block plus
    the set of (label, block) moves it can make after inert τ steps."""
    n = len(offsets) - 1
    pool = np.empty(max(1024, 2 * n), dtype=np.int64)
    used = 0
    sig_off = np.zeros(n, dtype=np.int64)
    sig_len = np.zeros(n, dtype=np.int32)
    tmp = np.empty(1024, dtype=np.int64)
    new_blk = np.empty(n, dtype=np.int32)
    size = 1024
    while size < 4 * n_blocks:
        size *= 2
    table = np.full(size, -1, dtype=np.int32)
    rep = np.empty(n, dtype=np.int32)
    n_new = 0
    nb = np.int64(n_blocks)
    for q in range(n):
        s = order[q]
        b = blk[s]
        m = 0
        if div[s]:
            tmp[0] = np.int64(delta_label) * nb
            m = 1
        for e in range(offsets[s], offsets[s + 1]):
            a = labels[e]
            t = targets[e]
            if a == 0 and blk[t] == b:
                if t == s:
                    continue
                k = sig_len[t]
                tmp = _grow1(tmp, m + k)
                tmp[m:m + k] = pool[sig_off[t]:sig_off[t] + k]
                m += k
            else:
                tmp = _grow1(tmp, m + 1)
                tmp[m] = np.int64(a) * nb + blk[t]
                m += 1
        if m > 32:
            tmp[:m] = np.sort(tmp[:m])
        else:
            for i in range(1, m):
                x = tmp[i]
                j = i - 1
                while j >= 0 and tmp[j] > x:
                    tmp[j + 1] = tmp[j]
                    j -= 1
                tmp[j + 1] = x
        u = 0
        for i in range(m):
            if i == 0 or tmp[i] != tmp[i - 1]:
                tmp[u] = tmp[i]
                u += 1
        pool = _grow1(pool, used + u)
        pool[used:used + u] = tmp[:u]
        sig_off[s] = used
        sig_len[s] = u
        used += u
        mask = len(table) - 1
        slot = np.int64(_sig_hash(b, pool, used - u, used) & np.uint64(mask))
        found = -1
        while table[slot] != -1:
            c = table[slot]
            r = rep[c]
            if blk[r] == b and sig_len[r] == u:
                same = True
                o = sig_off[r]
                for i in range(u):
                    if pool[o + i] != tmp[i]:
                        same = False
                        break
                if same:
                    found = c
                    break
            slot = (slot + 1) & mask
        if found == -1:
            found = n_new
            rep[n_new] = s
            n_new += 1
            table[slot] = found
            if 2 * n_new > len(table):
                table = np.full(len(table) * 2, -1, dtype=np.int32)
                mask = len(table) - 1
                for c in range(n_new):
                    r = rep[c]
                    sl = np.int64(_sig_hash(blk[r], pool, sig_off[r], sig_off[r] + sig_len[r]) & np.uint64(mask))
                    while table[sl] != -1:
                        sl = (sl + 1) & mask
                    table[sl] = c
        new_blk[s] = found
    return new_blk, n_new


@njit(cache=True)
def _quotient_edges(offsets, labels, targets, blk, n_blocks, div, n_labels):
    """Distinct non-inert moves between blocks, plus a τ self-loop on every
    block that can diverge."""
    n = len(offsets) - 1
    size = 1024
    while size < 4 * n_blocks:
        size *= 2
    table = np.full(size, -1, dtype=np.int64)
    codes = np.empty(1024, dtype=np.int64)
    count = 0
    nb = np.int64(n_blocks)
    for s in range(n):
        b = blk[s]
        for e in range(-1, offsets[s + 1] - offsets[s]):
            if e == -1:
                if not div[s]:
                    continue
                code = np.int64(b) * n_labels * nb + b
            else:
                k = offsets[s] + e
                a, t = labels[k], targets[k]
                if a == 0 and blk[t] == b:
                    continue
                code = (np.int64(b) * n_labels + a) * nb + blk[t]
            mask = len(table) - 1
            slot = np.int64((np.uint64(code) * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(17)) & mask
            dup = False
            while table[slot] != -1:
                if table[slot] == code:
                    dup = True
                    break
                slot = (slot + 1) & mask
            if dup:
                continue
            table[slot] = code
            codes = _grow1(codes, count + 1)
            codes[count] = code
            count += 1
            if 2 * count > len(table):
                table = np.full(len(table) * 2, -1, dtype=np.int64)
                mask = len(table) - 1
                for i in range(count):
                    sl = np.int64((np.uint64(codes[i]) * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(17)) & mask
                    while table[sl] != -1:
                        sl = (sl + 1) & mask
                    table[sl] = codes[i]
    codes = codes[:count]
    dst = (codes % nb).astype(np.int32)
    rest = codes // nb
    lab = (rest % n_labels).astype(np.int32)
    src = (rest // n_labels).astype(np.int32)
    return src, lab, dst


# ---------------------------------------------------------------- normalization


class NormalizedMachine:
    """Deterministic machine over the visible events (and ✓) of an LTS.

    Node 0 is the τ-closure of the root.  ``delta[n, label]`` is the successor
    node under a label of the source LTS, or -1; column 0 (τ) is unused.
    ``parent`` and ``parent_label`` form a breadth-first tree, so
    :meth:`trace_to` yields a shortest trace reaching a node.
    """

    def __init__(self, events, delta, divergent, acc_off, acc_words, member_off, members, parent, parent_label):
        self.events = list(events)
        self.delta = delta
        self.divergent = divergent
        self.acc_off = acc_off
        self.acc_words = acc_words
        self.member_off = member_off
        self.members = members
        self.parent = parent
        self.parent_label = parent_label
        self.root = 0

    @property
    def num_nodes(self) -> int:
        return len(self.delta)

    def successor(self, node: int, event: Event) -> int:
        try:
            lab = self.events.index(event)
        except ValueError:
            return -1
        return int(self.delta[node, lab]) if lab > 0 else -1

    def enabled(self, node: int) -> frozenset:
        return frozenset(self.events[l] for l in np.nonzero(self.delta[node] >= 0)[0] if l > 0)

    def acceptances(self, node: int) -> list:
        """Minimal acceptance sets of ``node`` as frozensets of events."""
        out = []
        for a in range(self.acc_off[node], self.acc_off[node + 1]):
            row = self.acc_words[a]
            out.append(frozenset(self.events[l] for l in range(1, len(self.events)) if row[l >> 6] >> np.uint64(l & 63) & np.uint64(1)))
        return out

    def refuses(self, node: int, refusal) -> bool:
        """True when some stable state of the node can refuse all of ``refusal``."""
        x = set(refusal)
        return any(not (acc & x) for acc in self.acceptances(node))

    def member_states(self, node: int) -> np.ndarray:
        return self.members[self.member_off[node]:self.member_off[node + 1]]

    def trace_to(self, node: int) -> tuple:
        out = []
        while node > 0:
            out.append(self.events[self.parent_label[node]])
            node = int(self.parent[node])
        return tuple(reversed(out))

    def traces_upto(self, depth: int, *, with_tick: bool = False) -> set:
        out = {()}
        frontier = {(): 0}
        for _ in range(depth):
            nxt = {}
            for tr, node in frontier.items():
                for lab in np.nonzero(self.delta[node] >= 0)[0]:
                    if lab == TAU_LABEL:
                        continue
                    t = tr + (self.events[lab],)
                    if lab == TICK_LABEL:
                        if with_tick:
                            out.add(t)
                        continue
                    nxt[t] = int(self.delta[node, lab])
            out.update(nxt)
            frontier = nxt
            if not frontier:
                break
        return out

    def __repr__(self):
        return f"NormalizedMachine({self.num_nodes} nodes, {len(self.events) - 2} events)"


def normalize(spec: LTS) -> NormalizedMachine:
    """Subset construction over τ-closures.

    Systems larger than ``REDUCE_THRESHOLD`` states are first replaced by
    their branching-bisimulation quotient; node members then refer to the
    quotient's states.
    """
    if spec.num_states > REDUCE_THRESHOLD:
        spec = branching_quotient(spec)
    _, divergent = divergence_marks(spec)
    res = _normalize(spec.offsets, spec.labels, spec.targets, len(spec.events), divergent, 0)
    return _machine(spec, res)


def _machine(lts, res) -> NormalizedMachine:
    (delta, n_nodes, node_div, acc_off, acc_words, n_acc, member_off, members, n_members,
     parent, parent_label, _, _) = res
    return NormalizedMachine(
        lts.events,
        delta[:n_nodes].copy(),
        node_div[:n_nodes].copy(),
        acc_off[: n_nodes + 1].copy(),
        acc_words[:n_acc].copy(),
        member_off[: n_nodes + 1].copy(),
        members[:n_members].copy(),
        parent[:n_nodes].copy(),
        parent_label[:n_nodes].copy(),
    )


@njit(cache=True)
def _grow1(a, need):
    if need <= len(a):
        return a
    size = len(a)
    while size < need:
        size *= 2
    b = np.empty(size, dtype=a.dtype)
    b[: len(a)] = a
    return b


@njit(cache=True)
def _grow2(a, need):
    if need <= a.shape[0]:
        return a
    size = a.shape[0]
    while size < need:
        size *= 2
    b = np.empty((size, a.shape[1]), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _set_hash(xs):
    h = np.uint64(1469598103934665603)
    for x in xs:
        h = (h ^ np.uint64(x)) * np.uint64(1099511628211)
        h ^= h >> np.uint64(31)
    return h


@njit(cache=True)
def _accept_bits(offsets, labels, u, row):
    """Fill ``row`` with the labels of ``u``'s edges; False if ``u`` is unstable."""
    row[:] = 0
    for e in range(offsets[u], offsets[u + 1]):
        lab = labels[e]
        if lab == 0:
            return False
        row[lab >> 6] |= np.uint64(1) << np.uint64(lab & 63)
    return True


@njit(cache=True)
def _subset(a, b):
    for k in range(len(a)):
        if a[k] & ~b[k]:
            return False
    return True


@njit(cache=True)
def _normalize(offsets, labels, targets, n_labels, divergent, det_mode):
    """Full subset construction.

    With ``det_mode`` 1 (failures) or 2 (failures-divergences) the search
    stops at the first node, in breadth-first order, that witnesses
    nondeterminism; the node and offending label are returned last.
    """
    n = len(offsets) - 1
    words = (n_labels + 63) >> 6
    stamp = np.full(n, -1, dtype=np.int64)
    stamp_no = 0
    stack = np.empty(1024, dtype=np.int32)
    closure = np.empty(1024, dtype=np.int32)

    cap = 64
    delta = np.full((cap, n_labels), -1, dtype=np.int32)
    node_div = np.zeros(cap, dtype=np.bool_)
    member_off = np.zeros(cap + 1, dtype=np.int64)
    parent = np.zeros(cap, dtype=np.int32)
    parent_label = np.zeros(cap, dtype=np.int32)
    acc_off = np.zeros(cap + 1, dtype=np.int64)
    members = np.empty(1024, dtype=np.int32)
    acc_words = np.zeros((64, words), dtype=np.uint64)
    n_acc = 0
    table = np.full(1024, -1, dtype=np.int32)
    n_nodes = 0
    n_members = 0

    row = np.zeros(words, dtype=np.uint64)
    enabled = np.zeros(words, dtype=np.uint64)
    pend_lab = np.empty(1024, dtype=np.int32)
    pend_tgt = np.empty(1024, dtype=np.int32)
    seeds = np.empty(1, dtype=np.int32)
    seeds[0] = 0
    n_seeds = 1
    pending_from = -1
    pending_label = 0
    det_node = -1
    det_label = -1
    pend_pos = 0
    n_pend = 0

    head = 0
    # the root node is created first, then nodes are expanded in order
    while True:
        # ---- close and intern the pending seed set
        if n_seeds > 0:
            stamp_no += 1
            size = 0
            sp = 0
            for q in range(n_seeds):
                u = seeds[q]
                if stamp[u] != stamp_no:
                    stamp[u] = stamp_no
                    stack = _grow1(stack, sp + 1)
                    stack[sp] = u
                    sp += 1
            while sp > 0:
                sp -= 1
                u = stack[sp]
                closure = _grow1(closure, size + 1)
                closure[size] = u
                size += 1
                for e in range(offsets[u], offsets[u + 1]):
                    if labels[e] != 0:
                        break
                    w = targets[e]
                    if stamp[w] != stamp_no:
                        stamp[w] = stamp_no
                        stack = _grow1(stack, sp + 1)
                        stack[sp] = w
                        sp += 1
            cl = np.sort(closure[:size])
            h = _set_hash(cl)
            mask = len(table) - 1
            slot = np.int64(h & np.uint64(mask))
            found = -1
            while table[slot] != -1:
                cand = table[slot]
                lo, hi = member_off[cand], member_off[cand + 1]
                if hi - lo == size:
                    same = True
                    for q in range(size):
                        if members[lo + q] != cl[q]:
                            same = False
                            break
                    if same:
                        found = cand
                        break
                slot = (slot + 1) & mask
            if found == -1:
                found = n_nodes
                if n_nodes + 1 >= delta.shape[0]:
                    cap = delta.shape[0] * 2
                    d2 = np.full((cap, n_labels), -1, dtype=np.int32)
                    d2[:n_nodes] = delta[:n_nodes]
                    delta = d2
                    node_div = _grow1(node_div, cap)
                    parent = _grow1(parent, cap)
                    parent_label = _grow1(parent_label, cap)
                    member_off = _grow1(member_off, cap + 1)
                    acc_off = _grow1(acc_off, cap + 1)
                table[slot] = found
                members = _grow1(members, n_members + size)
                members[n_members:n_members + size] = cl
                n_members += size
                member_off[found + 1] = n_members
                div = False
                for q in range(size):
                    if divergent[cl[q]]:
                        div = True
                        break
                node_div[found] = div
                parent[found] = max(pending_from, 0)
                parent_label[found] = pending_label
                # minimal acceptances of the stable members
                start = n_acc
                for q in range(size):
                    if not _accept_bits(offsets, labels, cl[q], row):
                        continue
                    dominated = False
                    for a in range(start, n_acc):
                        if _subset(acc_words[a], row):
                            dominated = True
                            break
                    if dominated:
                        continue
                    keep = start
                    for a in range(start, n_acc):
                        if not _subset(row, acc_words[a]):
                            acc_words[keep] = acc_words[a]
                            keep += 1
                    n_acc = keep
                    acc_words = _grow2(acc_words, n_acc + 1)
                    acc_words[n_acc] = row
                    n_acc += 1
                acc_off[found + 1] = n_acc
                n_nodes += 1
                if 2 * n_nodes >= len(table):
                    table = np.full(len(table) * 2, -1, dtype=np.int32)
                    mask = len(table) - 1
                    for c in range(n_nodes):
                        lo, hi = member_off[c], member_off[c + 1]
                        s2 = np.int64(_set_hash(members[lo:hi]) & np.uint64(mask))
                        while table[s2] != -1:
                            s2 = (s2 + 1) & mask
                        table[s2] = c
            if pending_from >= 0:
                delta[pending_from, pending_label] = found
            n_seeds = 0

        # ---- next seed set: pending label groups of the node being expanded
        if pending_from >= 0 and pend_pos < n_pend:
            lab = pend_lab[pend_pos]
            start = pend_pos
            while pend_pos < n_pend and pend_lab[pend_pos] == lab:
                pend_pos += 1
            seeds = pend_tgt[start:pend_pos].copy()
            n_seeds = pend_pos - start
            pending_label = lab
            continue

        if head >= n_nodes:
            break
        # ---- expand the next node
        v = head
        head += 1
        lo, hi = member_off[v], member_off[v + 1]
        n_pend = 0
        for q in range(lo, hi):
            u = members[q]
            for e in range(offsets[u], offsets[u + 1]):
                if labels[e] == 0:
                    continue
                pend_lab = _grow1(pend_lab, n_pend + 1)
                pend_tgt = _grow1(pend_tgt, n_pend + 1)
                pend_lab[n_pend] = labels[e]
                pend_tgt[n_pend] = targets[e]
                n_pend += 1
        order = np.argsort(pend_lab[:n_pend], kind="mergesort")
        pend_lab[:n_pend] = pend_lab[:n_pend][order]
        pend_tgt[:n_pend] = pend_tgt[:n_pend][order]
        pend_pos = 0
        pending_from = v
        if det_mode > 0:
            if det_mode == 2 and node_div[v]:
                det_node = v
                det_label = 0
                break
            enabled[:] = 0
            for q in range(n_pend):
                lab = pend_lab[q]
                enabled[lab >> 6] |= np.uint64(1) << np.uint64(lab & 63)
            for q in range(lo, hi):
                if not _accept_bits(offsets, labels, members[q], row):
                    continue
                missing = -1
                for lab in range(1, n_labels):
                    bit = np.uint64(1) << np.uint64(lab & 63)
                    if (enabled[lab >> 6] & bit) and not (row[lab >> 6] & bit):
                        missing = lab
                        break
                if missing != -1 and (det_label == -1 or missing < det_label):
                    det_label = missing
            if det_label != -1:
                det_node = v
                break
    return (delta, n_nodes, node_div, acc_off, acc_words, n_acc, member_off, members, n_members,
            parent, parent_label, det_node, det_label)


# ---------------------------------------------------------------- product search


@njit(cache=True)
def _product(delta, node_div, acc_off, acc_words, offsets, labels, targets, lab_map, impl_div, root, model):
    """Layered BFS over (spec node, impl state) pairs.

    Returns ``(status, pair, label, pn, ps, par, plab, n_pairs)`` where status
    is 0 (holds), 1 (illegal event ``label``), 2 (illegal refusal) or 3
    (illegal divergence) at ``pair``.
    """
    n_impl = len(offsets) - 1
    words = acc_words.shape[1]
    cap = 1 << 12
    pn = np.empty(cap, dtype=np.int32)
    ps = np.empty(cap, dtype=np.int32)
    par = np.empty(cap, dtype=np.int32)
    plab = np.empty(cap, dtype=np.int32)
    table = np.full(cap * 2, -1, dtype=np.int32)
    row = np.zeros(words, dtype=np.uint64)
    pn[0], ps[0], par[0], plab[0] = 0, root, -1, 0
    mask = len(table) - 1
    table[_pair_slot(0, root, n_impl, mask)] = 0
    n_pairs = 1
    layer = 0
    while layer < n_pairs:
        i = layer
        while i < n_pairs:
            node, s = pn[i], ps[i]
            if model == 2 and node_div[node]:
                i += 1
                continue
            if model == 2 and impl_div[s]:
                return 3, i, 0, pn, ps, par, plab, n_pairs
            stable = True
            for e in range(offsets[s], offsets[s + 1]):
                lab = labels[e]
                if lab == 0:
                    stable = False
                    continue
                m = lab_map[lab]
                if m < 0 or delta[node, m] < 0:
                    return 1, i, lab, pn, ps, par, plab, n_pairs
            if model >= 1 and stable:
                row[:] = 0
                for e in range(offsets[s], offsets[s + 1]):
                    m = lab_map[labels[e]]
                    row[m >> 6] |= np.uint64(1) << np.uint64(m & 63)
                ok = False
                for a in range(acc_off[node], acc_off[node + 1]):
                    if _subset(acc_words[a], row):
                        ok = True
                        break
                if not ok:
                    return 2, i, 0, pn, ps, par, plab, n_pairs
            # τ-successors stay in this layer
            for e in range(offsets[s], offsets[s + 1]):
                if labels[e] != 0:
                    break
                t = targets[e]
                pn, ps, par, plab, table, n_pairs = _visit(pn, ps, par, plab, table, n_pairs, node, t, i, 0, n_impl)
            i += 1
        end = n_pairs
        for i in range(layer, end):
            node, s = pn[i], ps[i]
            if model == 2 and node_div[node]:
                continue
            for e in range(offsets[s], offsets[s + 1]):
                lab = labels[e]
                if lab == 0:
                    continue
                nxt = delta[node, lab_map[lab]]
                pn, ps, par, plab, table, n_pairs = _visit(pn, ps, par, plab, table, n_pairs, nxt, targets[e], i, lab, n_impl)
        layer = end
    return 0, -1, 0, pn, ps, par, plab, n_pairs


@njit(cache=True)
def _pair_slot(node, s, n_impl, mask):
    k = np.uint64(node) * np.uint64(n_impl) + np.uint64(s)
    return np.int64((k * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(20)) & mask


@njit(cache=True)
def _visit(pn, ps, par, plab, table, n_pairs, node, s, parent, lab, n_impl):
    mask = len(table) - 1
    slot = _pair_slot(node, s, n_impl, mask)
    while table[slot] != -1:
        j = table[slot]
        if pn[j] == node and ps[j] == s:
            return pn, ps, par, plab, table, n_pairs
        slot = (slot + 1) & mask
    if n_pairs >= len(pn):
        pn = _grow1(pn, n_pairs + 1)
        ps = _grow1(ps, n_pairs + 1)
        par = _grow1(par, n_pairs + 1)
        plab = _grow1(plab, n_pairs + 1)
    pn[n_pairs], ps[n_pairs], par[n_pairs], plab[n_pairs] = node, s, parent, lab
    table[slot] = n_pairs
    n_pairs += 1
    if 2 * n_pairs >= len(table):
        table = np.full(len(table) * 2, -1, dtype=np.int32)
        mask = len(table) - 1
        for j in range(n_pairs):
            slot = _pair_slot(pn[j], ps[j], n_impl, mask)
            while table[slot] != -1:
                slot = (slot + 1) & mask
            table[slot] = j
    return pn, ps, par, plab, table, n_pairs


@njit(cache=True)
def _search(offsets, labels, targets, flags, root):
    """Layered BFS from ``root`` to the first state with ``flags`` set."""
    n = len(offsets) - 1
    seen = np.zeros(n, dtype=np.bool_)
    order = np.empty(n, dtype=np.int32)
    par = np.full(n, -1, dtype=np.int32)
    plab = np.zeros(n, dtype=np.int32)
    order[0] = root
    seen[root] = True
    count = 1
    layer = 0
    while layer < count:
        i = layer
        while i < count:
            s = order[i]
            if flags[s]:
                return s, par, plab
            for e in range(offsets[s], offsets[s + 1]):
                if labels[e] != 0:
                    break
                t = targets[e]
                if not seen[t]:
                    seen[t] = True
                    order[count] = t
                    par[t], plab[t] = s, 0
                    count += 1
            i += 1
        end = count
        for i in range(layer, end):
            s = order[i]
            for e in range(offsets[s], offsets[s + 1]):
                lab = labels[e]
                t = targets[e]
                if lab != 0 and not seen[t]:
                    seen[t] = True
                    order[count] = t
                    par[t], plab[t] = s, lab
                    count += 1
        layer = end
    return -1, par, plab


# ---------------------------------------------------------------- public checks


def _trace_from(events, par, plab, idx) -> tuple:
    out = []
    while par[idx] != -1:
        if plab[idx] != TAU_LABEL:
            out.append(events[plab[idx]])
        idx = int(par[idx])
    return tuple(reversed(out))


def refines(spec: LTS, impl: LTS, model) -> Verdict:
    """Decide ``spec ⊑ impl`` in the given semantic model.

    Large implementations are checked through their branching quotient; the
    counterexample state is then a raw state of the offending block, reached
    by the trace, that shows the witness.
    """
    model = SemanticModel.parse(model)
    # a traces product is linear in the implementation, so only quotient
    # for it when the quotient already exists
    reduced = impl.num_states > REDUCE_THRESHOLD and (
        model is not SemanticModel.TRACES or getattr(impl, "_quotient", None) is not None
    )
    raw = impl
    if reduced:
        impl = branching_quotient(impl)
    machine = spec if isinstance(spec, NormalizedMachine) else normalize(spec)
    lab_map = np.full(len(impl.events), -1, dtype=np.int64)
    spec_index = {e: i for i, e in enumerate(machine.events)}
    for i, e in enumerate(impl.events):
        lab_map[i] = spec_index.get(e, -1)
    lab_map[TAU_LABEL] = TAU_LABEL
    if model is SemanticModel.FD:
        _, impl_div = divergence_marks(impl)
    else:
        impl_div = np.zeros(1, dtype=np.bool_)
    status, idx, lab, pn, ps, par, plab, n_pairs = _product(
        machine.delta, machine.divergent, machine.acc_off, machine.acc_words,
        impl.offsets, impl.labels, impl.targets, lab_map, impl_div, impl.root, _MODEL_CODE[model],
    )
    stats = {"spec_nodes": machine.num_nodes, "impl_states": impl.num_states, "pairs": int(n_pairs)}
    if status == 0:
        return Verdict(True, model, None, stats)
    trace = _trace_from(impl.events, par, plab, idx)
    s = int(ps[idx])
    if status == 1:
        witness = IllegalEvent(impl.events[lab])
    elif status == 2:
        node = int(pn[idx])
        offered = {impl.events[l] for l in impl.labels[impl.offsets[s]:impl.offsets[s + 1]]}
        witness = IllegalRefusal(frozenset(machine.enabled(node) - offered))
    else:
        witness = IllegalDivergence()
    if reduced:
        s = _raw_witness(raw, impl, trace, s, witness)
    return Verdict(False, model, Counterexample(trace, witness, s), stats)


def _raw_witness(raw: LTS, quotient: LTS, trace, block: int, witness) -> int:
    """A state of ``raw`` in ``block``, reached by ``trace``, that shows ``witness``."""
    for s in sorted(st for st in after(raw, trace) if quotient.block_of[st] == block):
        labs, _ = raw.edges(s)
        if isinstance(witness, IllegalRefusal) and TAU_LABEL in labs:
            continue
        if isinstance(witness, IllegalEvent) and raw.event_index(witness.event) not in labs:
            continue
        return s
    return int(quotient.representative[block])


def check_traces(spec: LTS, impl: LTS) -> Verdict:
    return refines(spec, impl, SemanticModel.TRACES)


def check_stable_failures(spec: LTS, impl: LTS) -> Verdict:
    return refines(spec, impl, SemanticModel.FAILURES)


def check_failures_divergences(spec: LTS, impl: LTS) -> Verdict:
    return refines(spec, impl, SemanticModel.FD)


def _first(p: LTS, flags) -> Counterexample | None:
    s, par, plab = _search(p.offsets, p.labels, p.targets, flags, p.root)
    if s < 0:
        return None
    return Counterexample(_trace_from(p.events, par, plab, s), None, int(s))


def check_divergence_free(p: LTS) -> Verdict:
    on_cycle, _ = divergence_marks(p)
    found = _first(p, on_cycle)
    stats = {"states": p.num_states}
    if found is None:
        return Verdict(True, None, None, stats)
    return Verdict(False, None, Counterexample(found.trace, IllegalDivergence(), found.state), stats)


def check_deadlock_free(p: LTS, *, termination_is_deadlock: bool = False) -> Verdict:
    """Fails when a reachable state has no edges.  States entered by ✓ are
    successful termination unless ``termination_is_deadlock``."""
    flags = np.diff(p.offsets) == 0
    if not termination_is_deadlock:
        flags[p.targets[p.labels == TICK_LABEL]] = False
    found = _first(p, flags)
    stats = {"states": p.num_states}
    if found is None:
        return Verdict(True, None, None, stats)
    return Verdict(False, None, Counterexample(found.trace, Deadlock(), found.state), stats)


def check_deterministic(p: LTS, model=SemanticModel.FD) -> Verdict:
    """FDR-style determinism: normalise ``p`` and look for a node whose
    stable members disagree on an event the node can perform."""
    model = SemanticModel.parse(model)
    if model is SemanticModel.TRACES:
        raise ValueError("determinism is defined for the failures and failures-divergences models")
    if p.num_states > REDUCE_THRESHOLD:
        p = branching_quotient(p)
    _, divergent = divergence_marks(p)
    res = _normalize(p.offsets, p.labels, p.targets, len(p.events), divergent, _MODEL_CODE[model])
    det_node, det_label = int(res[-2]), int(res[-1])
    stats = {"nodes": int(res[1]), "states": p.num_states}
    if det_node < 0:
        return Verdict(True, model, None, stats)
    machine = _machine(p, res)
    trace = machine.trace_to(det_node)
    witness = IllegalDivergence() if det_label == 0 else Nondeterminism(p.events[det_label])
    return Verdict(False, model, Counterexample(trace, witness), stats)


# ---------------------------------------------------------------- replay


def after(lts: LTS, trace) -> set:
    """States reachable by performing ``trace`` (with τ-closure)."""
    from .semantics import tau_closure

    current = tau_closure(lts, lts.root)
    for e in trace:
        lab = lts.event_index(e)
        nxt = set()
        for u in current:
            labs, tgts = lts.edges(u)
            for l, t in zip(labs, tgts):
                if l == lab:
                    nxt |= tau_closure(lts, int(t))
        current = nxt
        if not current:
            break
    return current
