"""Compiled exploration of large parallel networks.

The parallel/hiding skeleton at the top of a process is flattened into a
table of synchronisation rules over its sequential components ("leaves").
Each leaf is explored once by the interpreter in :mod:`refine_pj.semantics`;
the product is then explored by a numba kernel over bit-packed state
vectors.  Identical leaves that are siblings under one parallel operator are
kept sorted, which folds permutations of interchangeable components into a
single state.
"""

from __future__ import annotations

import itertools

import numpy as np
from numba import njit

from .errors import BoundExceeded
from .semantics import OMEGA_ID, TAU_LABEL, TICK_LABEL, LTS, Semantics
from .syntax import TAU, TICK

MAX_LEAF_STATES = 1 << 20
_BUFFER = 1 << 14


class _Node:
    __slots__ = ("kind", "data", "kids", "leaf")

    def __init__(self, kind, data=None, kids=(), leaf=-1):
        self.kind, self.data, self.kids, self.leaf = kind, data, kids, leaf


class Network:
    """Leaves, their local transition tables and the synchronisation rules."""

    def __init__(self, sem: Semantics, root: int, leaf_bound: int = MAX_LEAF_STATES):
        self.sem = sem
        # a leaf may be unbounded alone yet finite in context; the caller
        # then falls back to the interpreter
        self.leaf_bound = min(leaf_bound, MAX_LEAF_STATES)
        self.leaf_roots: list = []
        self.groups: list = []
        self.tree = self._split(root)
        self.leaves = [self._explore_leaf(c) for c in self.leaf_roots]

    # -- decomposition

    def _split(self, c: int) -> _Node:
        cfg = self.sem.configs[c]
        kind = cfg[0]
        if kind == "hide":
            return _Node("hide", cfg[1], (self._split(cfg[2]),))
        if kind == "par":
            kids = tuple(self._split(k) for k in cfg[2])
            # identical sibling leaves are interchangeable
            by_root: dict = {}
            for k, node in zip(cfg[2], kids):
                if node.kind == "leaf":
                    by_root.setdefault(k, []).append(node.leaf)
            for members in by_root.values():
                if len(members) > 1:
                    self.groups.append(members)
            return _Node("par", cfg[1], kids)
        if kind == "apar":
            return _Node("apar", (cfg[1], cfg[2]), (self._split(cfg[3]), self._split(cfg[4])))
        self.leaf_roots.append(c)
        return _Node("leaf", leaf=len(self.leaf_roots) - 1)

    def _explore_leaf(self, root: int):
        sem = self.sem
        number = {root: 0}
        order = [root]
        trans = []
        i = 0
        while i < len(order):
            c = order[i]
            i += 1
            row = []
            for lab, tgt in sem.transitions(c):
                t = number.get(tgt)
                if t is None:
                    t = number[tgt] = len(order)
                    order.append(tgt)
                    if len(order) > self.leaf_bound:
                        raise _Unsupported("leaf too large")
                row.append((lab, t))
            trans.append(row)
        if OMEGA_ID in number or any(lab == TICK_LABEL for row in trans for lab, _ in row):
            raise _Unsupported("terminating component")
        return order, trans

    # -- rules

    def rules(self):
        """``[(event, participants, hidden)]`` with participants sorted by leaf."""
        vis, hid = self._rules(self.tree)
        out = []
        for e in sorted(vis, key=lambda lab: self.sem.events[lab]):
            for alt in vis[e]:
                out.append((e, tuple(sorted(alt)), False))
        for e, alt in hid:
            out.append((e, tuple(sorted(alt)), True))
        return out

    def _rules(self, node: _Node):
        if node.kind == "leaf":
            _, trans = self.leaves[node.leaf]
            labs = {lab for row in trans for lab, _ in row if lab != TAU_LABEL}
            return {lab: [(node.leaf,)] for lab in labs}, []
        events = self.sem.events
        if node.kind == "hide":
            vis, hid = self._rules(node.kids[0])
            keep = {}
            for e, alts in vis.items():
                if events[e] in node.data:
                    hid = hid + [(e, a) for a in alts]
                else:
                    keep[e] = alts
            return keep, hid
        if node.kind == "par":
            parts = [self._rules(k) for k in node.kids]
            vis: dict = {}
            hid = [h for _, hs in parts for h in hs]
            labels = set().union(*(p[0].keys() for p in parts))
            for e in labels:
                if events[e] in node.data:
                    if all(e in p[0] for p in parts):
                        vis[e] = [sum(combo, ()) for combo in itertools.product(*(p[0][e] for p in parts))]
                else:
                    vis[e] = [a for p in parts for a in p[0].get(e, ())]
            return vis, hid
        a, b = node.data
        (lv, lh), (rv, rh) = self._rules(node.kids[0]), self._rules(node.kids[1])
        vis = {}
        for e, alts in lv.items():
            ev = events[e]
            if ev not in a:
                continue
            if ev in b:
                if e in rv:
                    vis[e] = [x + y for x in alts for y in rv[e]]
            else:
                vis[e] = list(alts)
        for e, alts in rv.items():
            ev = events[e]
            if ev in b and ev not in a:
                vis[e] = list(alts)
        return vis, lh + rh


class _Unsupported(Exception):
    pass


def explore_compiled(env, expr, state_bound: int, semantics: Semantics | None = None):
    """Explore ``expr`` with the compiled kernel, or return None when the
    process has no parallel skeleton worth flattening (or terminates)."""
    sem = semantics or Semantics(env)
    root = sem.enter(expr, {})
    cfg = sem.configs[root]
    if cfg[0] not in ("par", "apar", "hide"):
        return None
    try:
        net = Network(sem, root, state_bound)
    except _Unsupported:
        return None
    if len(net.leaves) < 2:
        return None
    return _run(net, state_bound)


def _run(net: Network, state_bound: int) -> LTS:
    sem = net.sem
    L = len(net.leaves)
    # keep interchangeable leaves contiguous so a group is one slice
    order = []
    grouped = set()
    group_ranges = []
    for g in net.groups:
        start = len(order)
        order.extend(g)
        grouped.update(g)
        group_ranges.append((start, len(order)))
    order.extend(i for i in range(L) if i not in grouped)
    pos = {leaf: k for k, leaf in enumerate(order)}
    leaves = [net.leaves[i] for i in order]

    rules = net.rules()
    visible = sorted({e for e, _, hidden in rules if not hidden}, key=lambda lab: sem.events[lab])
    out_label = {e: k + 2 for k, e in enumerate(visible)}
    events = [TAU, TICK] + [sem.events[e] for e in visible]

    # per-leaf event numbering: 0 is the leaf's own tau
    leaf_events = []
    for _, trans in leaves:
        labs = sorted({lab for row in trans for lab, _ in row if lab != TAU_LABEL})
        leaf_events.append({lab: k + 1 for k, lab in enumerate(labs)})
    nev = np.array([len(m) + 1 for m in leaf_events], dtype=np.int64)
    nstates = np.array([len(t) for _, t in leaves], dtype=np.int64)
    dense_base = np.zeros(L, dtype=np.int64)
    total = 0
    for i in range(L):
        dense_base[i] = total
        total += int(nstates[i] * nev[i])
    dense_start = np.zeros(total, dtype=np.int64)
    dense_count = np.zeros(total, dtype=np.int64)
    leaf_targets = []
    avail_off = [0]
    avail = []
    state_base = np.zeros(L, dtype=np.int64)
    sb = 0
    for i, (_, trans) in enumerate(leaves):
        state_base[i] = sb
        sb += len(trans)
        m = leaf_events[i]
        for s, row in enumerate(trans):
            cells: dict = {}
            for lab, t in row:
                cells.setdefault(0 if lab == TAU_LABEL else m[lab], []).append(t)
            for le in sorted(cells):
                idx = dense_base[i] + s * nev[i] + le
                dense_start[idx] = len(leaf_targets)
                dense_count[idx] = len(cells[le])
                leaf_targets.extend(cells[le])
                if le:
                    avail.append(le)
            avail_off.append(len(avail))
    leaf_targets = np.array(leaf_targets or [0], dtype=np.int64)
    avail_off = np.array(avail_off, dtype=np.int64)
    avail = np.array(avail or [0], dtype=np.int64)

    # rules are triggered by their first participant (in vector order)
    rule_label, rule_poff, rule_leaf, rule_ev = [], [0], [], []
    trig: dict = {}
    for r, (e, alt, hidden) in enumerate(rules):
        parts = sorted(pos[a] for a in alt)
        rule_label.append(TAU_LABEL if hidden else out_label[e])
        for p in parts:
            rule_leaf.append(p)
            rule_ev.append(leaf_events[p][e])
        rule_poff.append(len(rule_leaf))
        trig.setdefault((parts[0], leaf_events[parts[0]][e]), []).append(r)
    trig_base = np.zeros(L, dtype=np.int64)
    tb = 0
    for i in range(L):
        trig_base[i] = tb
        tb += int(nev[i])
    trig_off = np.zeros(tb + 1, dtype=np.int64)
    trig_rules = []
    for i in range(L):
        for le in range(int(nev[i])):
            trig_off[trig_base[i] + le] = len(trig_rules)
            trig_rules.extend(trig.get((i, le), ()))
    trig_off[tb] = len(trig_rules)
    trig_rules = np.array(trig_rules or [0], dtype=np.int64)
    grp = np.array(group_ranges or [(0, 0)], dtype=np.int64).reshape(-1, 2)
    ngrp = len(group_ranges)

    # each leaf's local state is bit-packed into a few 64-bit words
    bits = [max(1, int(n - 1).bit_length()) for n in nstates]
    word = np.zeros(L, dtype=np.int64)
    shift = np.zeros(L, dtype=np.int64)
    w, used = 0, 0
    for i, b in enumerate(bits):
        if used + b > 64:
            w, used = w + 1, 0
        word[i], shift[i] = w, used
        used += b
    W = w + 1
    fmask = np.array([(1 << b) - 1 for b in bits], dtype=np.uint64)

    cap = 1 << 16
    keys = np.zeros((cap, W), dtype=np.uint64)
    table = np.full(cap * 2, -1, dtype=np.int32)
    offsets = np.zeros(cap + 1, dtype=np.int64)
    chunk = 1 << 22
    e_lab = np.zeros(chunk, dtype=np.int32)
    e_tgt = np.zeros(chunk, dtype=np.int32)
    done_lab, done_tgt = [], []
    base_edges = 0
    n_states, head, n_edges = 1, 0, 0
    _insert(keys, table, 0)
    bound = int(state_bound)
    args = (
        nev, dense_base, dense_start, dense_count, leaf_targets, state_base, avail_off, avail,
        trig_base, trig_off, trig_rules, np.array(rule_label, dtype=np.int64), np.array(rule_poff, dtype=np.int64),
        np.array(rule_leaf or [0], dtype=np.int64), np.array(rule_ev or [0], dtype=np.int64), grp, ngrp,
        word, shift, fmask,
    )
    while True:
        n_states, head, n_edges, status = _kernel(
            keys, table, n_states, head, offsets, e_lab, e_tgt, n_edges, base_edges, bound, *args
        )
        if status == 0:
            break
        if status == 3:
            raise BoundExceeded(n_states, state_bound)
        if status == 1:
            cap *= 2
            grown = np.zeros((cap, W), dtype=np.uint64)
            grown[:n_states] = keys[:n_states]
            keys = grown
            o2 = np.zeros(cap + 1, dtype=np.int64)
            o2[: len(offsets)] = offsets
            offsets = o2
            table = None
            table = np.full(cap * 2, -1, dtype=np.int32)
            _rehash(keys, table, n_states)
        elif status == 2:
            done_lab.append(e_lab[:n_edges].copy())
            done_tgt.append(e_tgt[:n_edges].copy())
            base_edges += n_edges
            n_edges = 0
    done_lab.append(e_lab[:n_edges])
    done_tgt.append(e_tgt[:n_edges])
    del table
    total_edges = base_edges + n_edges
    offsets = offsets[: n_states + 1].copy()
    offsets[n_states] = total_edges
    labels = np.concatenate(done_lab)
    del done_lab, e_lab
    targets = np.concatenate(done_tgt)
    del done_tgt, e_tgt
    # drop visible events whose rules never fired
    used = np.bincount(labels, minlength=len(events)) > 0
    used[:2] = True
    if not used.all():
        remap = np.cumsum(used).astype(np.int32) - 1
        labels = remap[labels]
        events = [e for e, u in zip(events, used) if u]
    packed = keys[:n_states].copy()
    del keys
    roots = [leaf[0] for leaf in leaves]

    def vector(s: int) -> list:
        return [int((packed[s, word[i]] >> np.uint64(shift[i])) & fmask[i]) for i in range(L)]

    def names(s: int) -> str:
        return " | ".join(sem.describe(roots[i][v]) for i, v in enumerate(vector(s)))

    lts = LTS(events, offsets, labels, targets, names)
    lts.vector = vector
    lts.leaf_configs = roots
    return lts


@njit(cache=True)
def _hash(v):
    h = np.uint64(1469598103934665603)
    for x in v:
        h = (h ^ x) * np.uint64(1099511628211)
        h ^= h >> np.uint64(29)
    return h


@njit(cache=True)
def _insert(keys, table, idx):
    mask = len(table) - 1
    h = _hash(keys[idx]) & np.uint64(mask)
    while table[h] != -1:
        h = (h + np.uint64(1)) & np.uint64(mask)
    table[h] = idx


@njit(cache=True)
def _rehash(keys, table, n):
    for i in range(n):
        _insert(keys, table, i)


@njit(cache=True)
def _find_or_add(keys, table, n_states, key):
    W = len(key)
    mask = len(table) - 1
    h = _hash(key) & np.uint64(mask)
    while True:
        idx = table[h]
        if idx == -1:
            keys[n_states, :] = key
            table[h] = n_states
            return n_states, n_states + 1
        same = True
        for k in range(W):
            if keys[idx, k] != key[k]:
                same = False
                break
        if same:
            return np.int64(idx), n_states
        h = (h + np.uint64(1)) & np.uint64(mask)


@njit(cache=True)
def _canon(vec, grp, ngrp):
    for g in range(ngrp):
        lo, hi = grp[g, 0], grp[g, 1]
        for a in range(lo + 1, hi):
            x = vec[a]
            b = a - 1
            while b >= lo and vec[b] > x:
                vec[b + 1] = vec[b]
                b -= 1
            vec[b + 1] = x


@njit(cache=True)
def _pack(vec, key, word, shift):
    key[:] = 0
    for i in range(len(vec)):
        key[word[i]] |= np.uint64(vec[i]) << np.uint64(shift[i])


@njit(cache=True)
def _add(keys, table, n_states, vec, key, grp, ngrp, word, shift):
    _canon(vec, grp, ngrp)
    _pack(vec, key, word, shift)
    return _find_or_add(keys, table, n_states, key)


@njit(cache=True)
def _kernel(keys, table, n_states, head, offsets, e_lab, e_tgt, n_edges, base_edges, bound,
            nev, dense_base, dense_start, dense_count, leaf_targets, state_base, avail_off, avail,
            trig_base, trig_off, trig_rules, rule_label, rule_poff, rule_leaf, rule_ev, grp, ngrp,
            word, shift, fmask):
    L = len(word)
    W = keys.shape[1]
    cap = keys.shape[0]
    buf_lab = np.zeros(_BUFFER, dtype=np.int64)
    buf_tgt = np.zeros(_BUFFER, dtype=np.int64)
    vec = np.zeros(L, dtype=np.int64)
    cur = np.zeros(L, dtype=np.int64)
    key = np.zeros(W, dtype=np.uint64)
    counters = np.zeros(64, dtype=np.int64)
    while head < n_states:
        if n_states + _BUFFER >= cap or 2 * (n_states + _BUFFER) >= len(table):
            return n_states, head, n_edges, 1
        if n_edges + _BUFFER >= len(e_lab):
            return n_states, head, n_edges, 2
        if n_states > bound:
            return n_states, head, n_edges, 3
        for i in range(L):
            cur[i] = np.int64((keys[head, word[i]] >> np.uint64(shift[i])) & fmask[i])
        nb = 0
        for i in range(L):
            ls = cur[i]
            # the leaf's own internal moves
            idx = dense_base[i] + ls * nev[i]
            for k in range(dense_start[idx], dense_start[idx] + dense_count[idx]):
                vec[:] = cur
                vec[i] = leaf_targets[k]
                t, n_states = _add(keys, table, n_states, vec, key, grp, ngrp, word, shift)
                buf_lab[nb] = 0
                buf_tgt[nb] = t
                nb += 1
            g = state_base[i] + ls
            for a in range(avail_off[g], avail_off[g + 1]):
                le = avail[a]
                tb = trig_base[i] + le
                for q in range(trig_off[tb], trig_off[tb + 1]):
                    r = trig_rules[q]
                    p0, p1 = rule_poff[r], rule_poff[r + 1]
                    ok = True
                    for p in range(p0 + 1, p1):
                        j = rule_leaf[p]
                        d = dense_base[j] + cur[j] * nev[j] + rule_ev[p]
                        if dense_count[d] == 0:
                            ok = False
                            break
                    if not ok:
                        continue
                    k_parts = p1 - p0
                    for p in range(k_parts):
                        counters[p] = 0
                    while True:
                        vec[:] = cur
                        for p in range(k_parts):
                            j = rule_leaf[p0 + p]
                            d = dense_base[j] + cur[j] * nev[j] + rule_ev[p0 + p]
                            vec[j] = leaf_targets[dense_start[d] + counters[p]]
                        t, n_states = _add(keys, table, n_states, vec, key, grp, ngrp, word, shift)
                        buf_lab[nb] = rule_label[r]
                        buf_tgt[nb] = t
                        nb += 1
                        # advance the odometer over the participants' choices
                        p = k_parts - 1
                        while p >= 0:
                            j = rule_leaf[p0 + p]
                            d = dense_base[j] + cur[j] * nev[j] + rule_ev[p0 + p]
                            counters[p] += 1
                            if counters[p] < dense_count[d]:
                                break
                            counters[p] = 0
                            p -= 1
                        if p < 0:
                            break
        # sort this state's edges by (label, target) and drop duplicates
        for a in range(1, nb):
            xl, xt = buf_lab[a], buf_tgt[a]
            b = a - 1
            while b >= 0 and (buf_lab[b] > xl or (buf_lab[b] == xl and buf_tgt[b] > xt)):
                buf_lab[b + 1] = buf_lab[b]
                buf_tgt[b + 1] = buf_tgt[b]
                b -= 1
            buf_lab[b + 1] = xl
            buf_tgt[b + 1] = xt
        offsets[head] = base_edges + n_edges
        for a in range(nb):
            if a > 0 and buf_lab[a] == buf_lab[a - 1] and buf_tgt[a] == buf_tgt[a - 1]:
                continue
            e_lab[n_edges] = buf_lab[a]
            e_tgt[n_edges] = buf_tgt[a]
            n_edges += 1
        head += 1
    return n_states, head, n_edges, 0
