"""CDCL SAT solver on flat numpy arrays.

Single-file solver: two-watched-literal propagation, 1UIP conflict
learning, activity-ordered decisions with phase saving, Luby restarts, and
monotone incremental solving (clauses may be added between solve calls;
learned clauses and heuristic state persist). The hot loops are numba-jitted
when numba is importable; the same code runs as plain Python otherwise
(set WIZBOOK_PURE_PYTHON=1 to force that).

Literal encoding: variable v >= 1; positive literal 2v, negative 2v+1.
The public API uses signed integers (+v / -v) like DIMACS.
"""

from __future__ import annotations

import os

import numpy as np

try:
    if os.environ.get("WIZBOOK_PURE_PYTHON") == "1":
        raise ImportError
    from numba import njit

    JITTED = True
except ImportError:  # pragma: no cover - exercised via env var
    JITTED = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


UNDEF, TRUE, FALSE = 0, 1, 2

# st[] slots: mutable search scalars shared by the kernel helpers
ST_TRAIL, ST_QHEAD, ST_DL, ST_HLEN, ST_CDB, ST_WL, ST_UNITS, ST_CONFL = range(8)

RES_SAT, RES_UNSAT, RES_UNKNOWN, RES_GROW = 1, 0, 2, 3

RESTART_BASE = 128
ACT_DECAY = 1.0 / 0.95
ACT_LIMIT = 1e100


@njit(cache=True)
def _lit_val(assign, lit):
    a = assign[lit >> 1]
    if a == UNDEF:
        return UNDEF
    if (a == TRUE) == ((lit & 1) == 0):
        return TRUE
    return FALSE


@njit(cache=True)
def _heap_sift_up(heap, hpos, act, i):
    v = heap[i]
    while i > 0:
        p = (i - 1) >> 1
        if act[heap[p]] >= act[v]:
            break
        heap[i] = heap[p]
        hpos[heap[p]] = i
        i = p
    heap[i] = v
    hpos[v] = i


@njit(cache=True)
def _heap_sift_down(heap, hpos, act, hlen, i):
    v = heap[i]
    while True:
        l = 2 * i + 1
        if l >= hlen:
            break
        c = l
        r = l + 1
        if r < hlen and act[heap[r]] > act[heap[l]]:
            c = r
        if act[heap[c]] <= act[v]:
            break
        heap[i] = heap[c]
        hpos[heap[c]] = i
        i = c
    heap[i] = v
    hpos[v] = i


@njit(cache=True)
def _heap_insert(heap, hpos, act, st, v):
    if hpos[v] != -1:
        return
    i = st[ST_HLEN]
    heap[i] = v
    hpos[v] = i
    st[ST_HLEN] += 1
    _heap_sift_up(heap, hpos, act, i)


@njit(cache=True)
def _heap_pop(heap, hpos, act, st):
    v = heap[0]
    hpos[v] = -1
    st[ST_HLEN] -= 1
    n = st[ST_HLEN]
    if n > 0:
        heap[0] = heap[n]
        hpos[heap[0]] = 0
        _heap_sift_down(heap, hpos, act, n, 0)
    return v


@njit(cache=True)
def _luby(i):
    size = 1
    seq = 0
    while size < i + 1:
        seq += 1
        size = 2 * size + 1
    while size - 1 != i:
        size = (size - 1) >> 1
        seq -= 1
        i = i % size
    return 1 << seq


@njit(cache=True)
def _enqueue(assign, level, reason, trail, st, lit, cref):
    v = lit >> 1
    assign[v] = TRUE if (lit & 1) == 0 else FALSE
    level[v] = st[ST_DL]
    reason[v] = cref
    trail[st[ST_TRAIL]] = lit
    st[ST_TRAIL] += 1


@njit(cache=True)
def _propagate(cdb, wl_head, wl_cref, wl_next, assign, level, reason, trail, st):
    while st[ST_QHEAD] < st[ST_TRAIL]:
        p = trail[st[ST_QHEAD]]
        st[ST_QHEAD] += 1
        fl = p ^ 1  # literal that just became false
        node = wl_head[fl]
        prev = -1
        while node != -1:
            nxt = wl_next[node]
            cref = wl_cref[node]
            if cdb[cref + 1] == fl:
                cdb[cref + 1] = cdb[cref + 2]
                cdb[cref + 2] = fl
            first = cdb[cref + 1]
            fv = _lit_val(assign, first)
            if fv == TRUE:
                prev = node
                node = nxt
                continue
            sz = cdb[cref]
            moved = False
            for j in range(cref + 3, cref + 1 + sz):
                lj = cdb[j]
                if _lit_val(assign, lj) != FALSE:
                    cdb[cref + 2] = lj
                    cdb[j] = fl
                    if prev == -1:
                        wl_head[fl] = nxt
                    else:
                        wl_next[prev] = nxt
                    wl_next[node] = wl_head[lj]
                    wl_head[lj] = node
                    moved = True
                    break
            if moved:
                node = nxt
                continue
            if fv == FALSE:
                return cref  # conflict
            _enqueue(assign, level, reason, trail, st, first, cref)
            prev = node
            node = nxt
    return -1


@njit(cache=True)
def _bump(act, heap, hpos, fctrl, v):
    act[v] += fctrl[0]
    if act[v] > ACT_LIMIT:
        for u in range(1, len(act)):
            act[u] *= 1e-100
        fctrl[0] *= 1e-100
    if hpos[v] != -1:
        _heap_sift_up(heap, hpos, act, hpos[v])


@njit(cache=True)
def _analyze(cdb, assign, level, reason, trail, st, seen, learnt, act, heap,
             hpos, fctrl, confl):
    counter = 0
    lsize = 1
    p_lit = -1
    idx = st[ST_TRAIL] - 1
    while True:
        sz = cdb[confl]
        for j in range(confl + 1, confl + 1 + sz):
            q = cdb[j]
            if q == p_lit:
                continue
            v = q >> 1
            if seen[v] == 0 and level[v] > 0:
                seen[v] = 1
                _bump(act, heap, hpos, fctrl, v)
                if level[v] >= st[ST_DL]:
                    counter += 1
                else:
                    learnt[lsize] = q
                    lsize += 1
        while seen[trail[idx] >> 1] == 0:
            idx -= 1
        p_lit = trail[idx]
        idx -= 1
        seen[p_lit >> 1] = 0
        counter -= 1
        if counter == 0:
            break
        confl = reason[p_lit >> 1]
    learnt[0] = p_lit ^ 1
    if lsize == 1:
        bt = 0
    else:
        mi = 1
        for j in range(2, lsize):
            if level[learnt[j] >> 1] > level[learnt[mi] >> 1]:
                mi = j
        tmp = learnt[1]
        learnt[1] = learnt[mi]
        learnt[mi] = tmp
        bt = level[learnt[1] >> 1]
    for j in range(lsize):
        seen[learnt[j] >> 1] = 0
    return lsize, bt


@njit(cache=True)
def _backtrack(assign, level, reason, trail, lim, phase, heap, hpos, act, st, b):
    if st[ST_DL] <= b:
        return
    target = lim[b + 1]
    i = st[ST_TRAIL] - 1
    while i >= target:
        lit = trail[i]
        v = lit >> 1
        phase[v] = 1 if (lit & 1) == 0 else 0
        assign[v] = UNDEF
        reason[v] = -1
        _heap_insert(heap, hpos, act, st, v)
        i -= 1
    st[ST_TRAIL] = target
    st[ST_QHEAD] = target
    st[ST_DL] = b


@njit(cache=True)
def _search(cdb, wl_head, wl_cref, wl_next, assign, level, reason, trail, lim,
            act, heap, hpos, phase, seen, root_units, learnt, st, fctrl,
            nvars, max_conflicts):
    # fresh search: clear assignment, rebuild the decision heap
    for v in range(1, nvars + 1):
        assign[v] = UNDEF
        reason[v] = -1
        level[v] = 0
        hpos[v] = -1
    st[ST_TRAIL] = 0
    st[ST_QHEAD] = 0
    st[ST_DL] = 0
    st[ST_HLEN] = 0
    st[ST_CONFL] = 0
    for v in range(1, nvars + 1):
        _heap_insert(heap, hpos, act, st, v)

    for i in range(st[ST_UNITS]):
        lit = root_units[i]
        val = _lit_val(assign, lit)
        if val == FALSE:
            return RES_UNSAT
        if val == UNDEF:
            _enqueue(assign, level, reason, trail, st, lit, -1)

    restart_num = 0
    conflicts_here = 0
    limit = RESTART_BASE * _luby(restart_num)
    while True:
        confl = _propagate(cdb, wl_head, wl_cref, wl_next, assign, level,
                           reason, trail, st)
        if confl != -1:
            if st[ST_DL] == 0:
                return RES_UNSAT
            st[ST_CONFL] += 1
            conflicts_here += 1
            if max_conflicts >= 0 and st[ST_CONFL] > max_conflicts:
                return RES_UNKNOWN
            lsize, bt = _analyze(cdb, assign, level, reason, trail, st, seen,
                                 learnt, act, heap, hpos, fctrl, confl)
            _backtrack(assign, level, reason, trail, lim, phase, heap, hpos,
                       act, st, bt)
            if lsize == 1:
                if st[ST_UNITS] >= len(root_units):
                    return RES_GROW
                root_units[st[ST_UNITS]] = learnt[0]
                st[ST_UNITS] += 1
                _enqueue(assign, level, reason, trail, st, learnt[0], -1)
            else:
                cref = st[ST_CDB]
                if cref + 1 + lsize > len(cdb) or st[ST_WL] + 2 > len(wl_cref):
                    return RES_GROW
                cdb[cref] = lsize
                for j in range(lsize):
                    cdb[cref + 1 + j] = learnt[j]
                st[ST_CDB] = cref + 1 + lsize
                for w in range(2):
                    node = st[ST_WL]
                    st[ST_WL] += 1
                    wl_cref[node] = cref
                    lit = cdb[cref + 1 + w]
                    wl_next[node] = wl_head[lit]
                    wl_head[lit] = node
                _enqueue(assign, level, reason, trail, st, learnt[0], cref)
            fctrl[0] *= ACT_DECAY
            if conflicts_here >= limit:
                restart_num += 1
                conflicts_here = 0
                limit = RESTART_BASE * _luby(restart_num)
                _backtrack(assign, level, reason, trail, lim, phase, heap,
                           hpos, act, st, 0)
        else:
            if st[ST_TRAIL] == nvars:
                return RES_SAT
            v = -1
            while st[ST_HLEN] > 0:
                v = _heap_pop(heap, hpos, act, st)
                if assign[v] == UNDEF:
                    break
                v = -1
            st[ST_DL] += 1
            lim[st[ST_DL]] = st[ST_TRAIL]
            lit = 2 * v + (0 if phase[v] == 1 else 1)
            _enqueue(assign, level, reason, trail, st, lit, -1)


class Solver:
    """Incremental CDCL solver: add clauses, solve, read the model, repeat.
    Clause addition is monotone (no pop); state persists across solves."""

    def __init__(self) -> None:
        self.nvars = 0
        self._cdb = np.zeros(1 << 14, dtype=np.int32)
        self._wl_head = np.full(64, -1, dtype=np.int32)
        self._wl_cref = np.zeros(1 << 12, dtype=np.int32)
        self._wl_next = np.zeros(1 << 12, dtype=np.int32)
        self._root_units = np.zeros(256, dtype=np.int32)
        self._st = np.zeros(8, dtype=np.int64)
        self._fctrl = np.array([1.0], dtype=np.float64)
        self._unsat = False
        self._orig_cdb_len = 0  # everything past this is learned
        self.model: np.ndarray | None = None
        self.conflicts = 0
        self._alloc_vars(64)

    # -- capacity management ------------------------------------------------

    def _alloc_vars(self, n: int) -> None:
        self._assign = np.zeros(n + 1, dtype=np.int8)
        self._level = np.zeros(n + 1, dtype=np.int32)
        self._reason = np.full(n + 1, -1, dtype=np.int32)
        self._trail = np.zeros(n + 1, dtype=np.int32)
        self._lim = np.zeros(n + 2, dtype=np.int32)
        self._act = np.zeros(n + 1, dtype=np.float64)
        self._heap = np.zeros(n + 1, dtype=np.int32)
        self._hpos = np.full(n + 1, -1, dtype=np.int32)
        self._phase = np.zeros(n + 1, dtype=np.int8)
        self._seen = np.zeros(n + 1, dtype=np.uint8)
        self._learnt = np.zeros(n + 2, dtype=np.int32)
        head = np.full(2 * n + 2, -1, dtype=np.int32)
        head[: len(self._wl_head)] = self._wl_head
        self._wl_head = head

    def _grow_vars(self) -> None:
        cap = len(self._assign) - 1
        if self.nvars < cap:
            return
        new = max(2 * cap, self.nvars + 1)
        old = {
            "assign": self._assign, "level": self._level, "reason": self._reason,
            "act": self._act, "hpos": self._hpos, "phase": self._phase,
        }
        self._alloc_vars(new)
        for name, arr in old.items():
            getattr(self, f"_{name}")[: len(arr)] = arr

    @staticmethod
    def _grown(arr: np.ndarray, need: int, fill: int = 0) -> np.ndarray:
        if need <= len(arr):
            return arr
        out = np.full(max(need, 2 * len(arr)), fill, dtype=arr.dtype)
        out[: len(arr)] = arr
        return out

    # -- public API -----------------------------------------------------------

    def new_var(self) -> int:
        self.nvars += 1
        self._grow_vars()
        return self.nvars

    def add_clause(self, lits) -> None:
        enc = []
        for sl in lits:
            v = abs(sl)
            if not 1 <= v <= self.nvars:
                raise ValueError(f"unknown variable {v}")
            enc.append(2 * v + (0 if sl > 0 else 1))
        enc = sorted(set(enc))
        for i in range(len(enc) - 1):
            if enc[i] ^ 1 == enc[i + 1]:
                return  # tautology
        if not enc:
            self._unsat = True
        elif len(enc) == 1:
            self._root_units = self._grown(self._root_units, self._st[ST_UNITS] + 1)
            self._root_units[self._st[ST_UNITS]] = enc[0]
            self._st[ST_UNITS] += 1
        else:
            need = self._st[ST_CDB] + 1 + len(enc)
            self._cdb = self._grown(self._cdb, int(need))
            cref = int(self._st[ST_CDB])
            self._cdb[cref] = len(enc)
            self._cdb[cref + 1 : cref + 1 + len(enc)] = enc
            self._st[ST_CDB] = need
            self._orig_cdb_len = int(need)
            self._watch(cref, enc[0])
            self._watch(cref, enc[1])

    def _watch(self, cref: int, lit: int) -> None:
        need = self._st[ST_WL] + 1
        if need > len(self._wl_cref):
            self._wl_cref = self._grown(self._wl_cref, int(need))
            self._wl_next = self._grown(self._wl_next, int(need))
        node = int(self._st[ST_WL])
        self._st[ST_WL] += 1
        self._wl_cref[node] = cref
        self._wl_next[node] = self._wl_head[lit]
        self._wl_head[lit] = node

    def solve(self, max_conflicts: int = -1) -> str:
        if self._unsat:
            return "unsat"
        while True:
            res = _search(
                self._cdb, self._wl_head, self._wl_cref, self._wl_next,
                self._assign, self._level, self._reason, self._trail,
                self._lim, self._act, self._heap, self._hpos, self._phase,
                self._seen, self._root_units, self._learnt, self._st,
                self._fctrl, self.nvars, max_conflicts,
            )
            self.conflicts = int(self._st[ST_CONFL])
            if res == RES_GROW:
                self._cdb = self._grown(self._cdb, 2 * len(self._cdb))
                self._wl_cref = self._grown(self._wl_cref, 2 * len(self._wl_cref))
                self._wl_next = self._grown(self._wl_next, 2 * len(self._wl_next))
                self._root_units = self._grown(
                    self._root_units, 2 * len(self._root_units)
                )
                continue
            if res == RES_SAT:
                self.model = self._assign.copy()
                return "sat"
            if res == RES_UNSAT:
                self._unsat = True
                return "unsat"
            return "unknown"

    def value(self, var: int) -> bool:
        if self.model is None:
            raise ValueError("no model: last solve was not sat")
        return bool(self.model[var] == TRUE)
