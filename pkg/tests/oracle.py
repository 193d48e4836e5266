"""Depth-bounded brute-force reference semantics.

Works straight off the small-step interpreter (no LTS arrays, no
normalization): a trace leads to the set of interpreter configurations
reachable by it, and everything is recomputed from those sets.
"""

from __future__ import annotations

from refine_pj.semantics import Semantics
from refine_pj.syntax import TAU, TICK


class Oracle:
    def __init__(self, env, proc):
        self.sem = Semantics(env)
        self.root = self.sem.enter(proc, {})
        self._succ = {}

    def succ(self, c) -> list:
        out = self._succ.get(c)
        if out is None:
            out = self._succ[c] = [(self.sem.events[l], t) for l, t in self.sem.transitions(c)]
        return out

    def closure(self, states) -> frozenset:
        seen = set(states)
        stack = list(states)
        while stack:
            u = stack.pop()
            for e, t in self.succ(u):
                if e == TAU and t not in seen:
                    seen.add(t)
                    stack.append(t)
        return frozenset(seen)

    def start(self) -> frozenset:
        return self.closure([self.root])

    def after(self, states, event) -> frozenset:
        return self.closure([t for u in states for e, t in self.succ(u) if e == event])

    def initials(self, c) -> frozenset:
        return frozenset(e for e, _ in self.succ(c) if e != TAU)

    def enabled(self, states) -> frozenset:
        return frozenset(e for u in states for e in self.initials(u))

    def stable(self, c) -> bool:
        return all(e != TAU for e, _ in self.succ(c))

    def min_acceptances(self, states) -> frozenset:
        accs = {self.initials(u) for u in states if self.stable(u)}
        return frozenset(a for a in accs if not any(b < a for b in accs))

    def divergent(self, states) -> bool:
        """Some member can perform τ forever."""
        # a τ-cycle exists among the τ-closure iff DFS finds a back edge
        colour = {}
        for s in states:
            if s in colour:
                continue
            stack = [(s, iter([t for e, t in self.succ(s) if e == TAU]))]
            colour[s] = 1
            while stack:
                u, it = stack[-1]
                for t in it:
                    c = colour.get(t, 0)
                    if c == 1:
                        return True
                    if c == 0:
                        colour[t] = 1
                        stack.append((t, iter([x for e, x in self.succ(t) if e == TAU])))
                        break
                else:
                    colour[u] = 2
                    stack.pop()
        return False

    def traces(self, depth: int) -> set:
        out = {()}
        frontier = {(): self.start()}
        for _ in range(depth):
            nxt = {}
            for tr, states in frontier.items():
                for e in self.enabled(states):
                    if e == TICK:
                        out.add(tr + (e,))
                        continue
                    nxt[tr + (e,)] = self.after(states, e)
            out.update(nxt)
            frontier = nxt
        return out


def compare_with_machine(oracle: Oracle, machine, depth: int) -> str | None:
    """Walk oracle state sets and machine nodes in lockstep up to ``depth``.

    Returns a description of the first disagreement on enabled events,
    minimal acceptances or divergence, else None.
    """
    seen = {}
    stack = [((), oracle.start(), 0)]
    while stack:
        trace, states, node = stack.pop()
        left = depth - len(trace)
        if seen.get((states, node), -1) >= left:
            continue
        seen[(states, node)] = left
        want = oracle.enabled(states)
        got = machine.enabled(node)
        if want != got:
            return f"after {trace}: enabled {sorted(map(str, want))} vs {sorted(map(str, got))}"
        if oracle.min_acceptances(states) != frozenset(machine.acceptances(node)):
            return f"after {trace}: acceptances differ"
        if oracle.divergent(states) != bool(machine.divergent[node]):
            return f"after {trace}: divergence differs"
        if left == 0:
            continue
        for e in want:
            if e == TICK:
                continue
            stack.append((trace + (e,), oracle.after(states, e), machine.successor(node, e)))
    return None


def refinement_violation(spec: Oracle, impl: Oracle, model: str, depth: int):
    """Shortest trace (length <= depth) witnessing ``spec ⋢ impl``, or None.

    ``model`` is traces, failures or fd.  Breadth-first, so the returned
    length is the minimum.
    """
    layer = [((), spec.start(), impl.start())]
    seen = set()
    for level in range(depth + 1):
        nxt = []
        for trace, s_states, i_states in layer:
            if (s_states, i_states) in seen:
                continue
            seen.add((s_states, i_states))
            if model == "fd" and spec.divergent(s_states):
                continue  # anything goes after a specification divergence
            if model == "fd" and impl.divergent(i_states):
                return trace, "divergence"
            s_enabled = spec.enabled(s_states)
            for e in impl.enabled(i_states):
                if e not in s_enabled:
                    return trace, ("event", e)
            if model != "traces":
                s_accs = spec.min_acceptances(s_states)
                for acc in impl.min_acceptances(i_states):
                    # the refusal Σ - acc must be allowed: some spec acceptance inside acc
                    if not any(a <= acc for a in s_accs):
                        return trace, ("refusal", acc)
            if level == depth:
                continue
            for e in sorted(impl.enabled(i_states)):
                if e == TICK:
                    continue
                nxt.append((trace + (e,), spec.after(s_states, e), impl.after(i_states, e)))
        layer = nxt
    return None


def strongly_bisimilar(a, b) -> bool:
    """Naive partition refinement over the disjoint union of two LTSs."""
    n = a.num_states
    succ = [[(e, t) for e, t in a.successors(s)] for s in range(n)]
    succ += [[(e, t + n) for e, t in b.successors(s)] for s in range(b.num_states)]
    block = [0] * len(succ)
    count = 1
    while True:
        sigs = [(block[s], frozenset((e, block[t]) for e, t in succ[s])) for s in range(len(succ))]
        ids = {}
        block = [ids.setdefault(sig, len(ids)) for sig in sigs]
        if len(ids) == count:
            return block[0] == block[n]
        count = len(ids)
