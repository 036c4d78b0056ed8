"""Leaf structures of binary trees and their ordered expansions.

A tree is a nested pair: a leaf is an int (a structure element), an internal
node is a pair (left, right).  Node addresses are binary strings ('' = root);
height = address length; the lexicographic leaf order compares addresses.

The derived relations on the leaf set:
  R(a,b,c,d)  -  a,b,c,d pairwise distinct and the arcs a-b and c-d are
                 vertex-disjoint in the (unrooted) tree;
  S(a,b,c)    -  a,b,c distinct, a,b lex-below c, and meet(a,b) is strictly
                 deeper than meet(b,c);
  a < b       -  leaf a left of leaf b.

For quadruples a < b < c < d the three relations satisfy the recovery
identity R(a,b,c,d) iff S(a,b,c) or (not S(a,b,c) and not S(b,c,d)).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .core import FiniteStructure, Signature

BORON_SIG = Signature((("R", 4),))
ORDERED_BORON_SIG = Signature((("R", 4), ("S", 3), ("<", 2)), order_symbol="<")


def is_leaf(tree) -> bool:
    return isinstance(tree, int)


def leaves(tree) -> list[int]:
    if is_leaf(tree):
        return [tree]
    return leaves(tree[0]) + leaves(tree[1])


def leaf_paths(tree, prefix="") -> dict[int, str]:
    if is_leaf(tree):
        return {tree: prefix}
    out = leaf_paths(tree[0], prefix + "0")
    out.update(leaf_paths(tree[1], prefix + "1"))
    return out


def subtree_at(tree, path: str):
    for ch in path:
        if is_leaf(tree):
            raise ValueError("path %r leaves the tree" % path)
        tree = tree[int(ch)]
    return tree


def replace_at(tree, path: str, new):
    if not path:
        return new
    if is_leaf(tree):
        raise ValueError("path %r leaves the tree" % path)
    if path[0] == "0":
        return (replace_at(tree[0], path[1:], new), tree[1])
    return (tree[0], replace_at(tree[1], path[1:], new))


def all_nodes(tree, prefix="") -> list[str]:
    if is_leaf(tree):
        return [prefix]
    return [prefix] + all_nodes(tree[0], prefix + "0") + all_nodes(tree[1], prefix + "1")


def relabel_tree(tree, mapping):
    if is_leaf(tree):
        return mapping[tree]
    return (relabel_tree(tree[0], mapping), relabel_tree(tree[1], mapping))


def common_prefix(a: str, b: str) -> str:
    i = 0
    m = min(len(a), len(b))
    while i < m and a[i] == b[i]:
        i += 1
    return a[:i]


@dataclass(frozen=True)
class BoronRealization:
    """A rooted binary tree whose leaves are structure elements 0..n-1."""

    tree: object

    def __post_init__(self):
        lv = leaves(self.tree)
        if sorted(lv) != list(range(len(lv))):
            raise ValueError("leaves must be exactly 0..n-1")

    @property
    def size(self) -> int:
        return len(leaves(self.tree))

    def paths(self) -> dict[int, str]:
        cached = getattr(self, "_paths", None)
        if cached is None:
            cached = leaf_paths(self.tree)
            object.__setattr__(self, "_paths", cached)
        return cached

    def lex_order(self) -> list[int]:
        """Elements listed left to right."""
        return leaves(self.tree)

    def meet(self, x: int, y: int) -> str:
        p = self.paths()
        return common_prefix(p[x], p[y])

    def height(self, node: str) -> int:
        return len(node)

    def cone(self, node: str) -> frozenset:
        return frozenset(leaves(subtree_at(self.tree, node)))

    def lex_less(self, x: int, y: int) -> bool:
        p = self.paths()
        return p[x] < p[y]

    # -- derived relations --------------------------------------------------

    def arc_vertices(self, x: int, y: int) -> frozenset:
        """Vertices of the tree path between leaves x and y (inclusive)."""
        p = self.paths()
        m = common_prefix(p[x], p[y])
        verts = {p[x][:i] for i in range(len(m), len(p[x]) + 1)}
        verts |= {p[y][:i] for i in range(len(m), len(p[y]) + 1)}
        return frozenset(verts)

    def quartet(self, a, b, c, d) -> bool:
        """R(a,b,c,d): arcs a-b and c-d vertex-disjoint."""
        if len({a, b, c, d}) != 4:
            return False
        return not (self.arc_vertices(a, b) & self.arc_vertices(c, d))

    def s_rel(self, a, b, c) -> bool:
        if len({a, b, c}) != 3:
            return False
        p = self.paths()
        if not (p[a] < p[c] and p[b] < p[c]):
            return False
        return len(common_prefix(p[a], p[b])) > len(common_prefix(p[b], p[c]))

    def to_structure(self, ordered: bool = True) -> FiniteStructure:
        n = self.size
        p = self.paths()
        dep = {x: len(p[x]) for x in range(n)}
        md = {}
        for x in range(n):
            for y in range(x + 1, n):
                d = len(common_prefix(p[x], p[y]))
                md[x, y] = md[y, x] = d

        def dist(u, v):
            return dep[u] + dep[v] - 2 * md[u, v]

        r_tuples = set()
        for a, b, c, d in itertools.combinations(range(n), 4):
            # the quartet split is the pairing with strictly smallest
            # distance sum (four-point condition); exactly one exists in a
            # binary tree
            opts = sorted(((dist(u1, u2) + dist(v1, v2), (u1, u2, v1, v2))
                           for (u1, u2), (v1, v2)
                           in (((a, b), (c, d)), ((a, c), (b, d)),
                               ((a, d), (b, c)))))
            if opts[0][0] < opts[1][0]:
                winners = [opts[0][1]]
            else:  # unreachable for binary trees; keep the slow reference
                winners = [t for t in itertools.permutations((a, b, c, d))
                           if t[0] < t[1] and t[2] < t[3] and t[0] < t[2]
                           and self.quartet(*t)]
            for u1, u2, v1, v2 in winners:
                for s1 in ((u1, u2), (u2, u1)):
                    for s2 in ((v1, v2), (v2, v1)):
                        r_tuples.add(s1 + s2)
                        r_tuples.add(s2 + s1)
        if not ordered:
            return FiniteStructure(BORON_SIG, n, {"R": r_tuples})
        s_tuples = []
        for a in range(n):
            for b in range(n):
                if b == a:
                    continue
                mab = md[a, b]
                for c in range(n):
                    if c == a or c == b:
                        continue
                    if p[a] < p[c] and p[b] < p[c] and mab > md[b, c]:
                        s_tuples.append((a, b, c))
        lt = [(x, y) for x in range(n) for y in range(n)
              if x != y and p[x] < p[y]]
        return FiniteStructure.unchecked(ORDERED_BORON_SIG, n,
                                         {"R": frozenset(r_tuples),
                                          "S": frozenset(s_tuples),
                                          "<": frozenset(lt)})


def boron_from_tree(tree, ordered: bool = True) -> FiniteStructure:
    return BoronRealization(tree).to_structure(ordered=ordered)


def tree_from_structure(A: FiniteStructure):
    """Reconstruct the rooted realization of an ordered boron structure.

    Returns a BoronRealization or None when A is not realizable.  The split
    point of each lex interval is read off S: with lo and hi the extreme
    leaves of the interval, an element m is in the left subtree iff
    S(lo, m, hi) (their meet is deeper than the interval root).
    """
    if A.signature != ORDERED_BORON_SIG:
        return None
    from .core import validate_structure

    if validate_structure(A):
        return None
    order = A.sorted_universe()
    S = A.rel("S")

    def build(seg):
        if len(seg) == 1:
            return seg[0]
        if len(seg) == 2:
            return (seg[0], seg[1])
        lo, hi = seg[0], seg[-1]
        left = [lo] + [m for m in seg[1:-1] if (lo, m, hi) in S]
        # left part must be a prefix of the segment
        if left != seg[:len(left)] or len(left) == len(seg):
            return None
        right = seg[len(left):]
        lt = build(left)
        rt = build(right)
        if lt is None or rt is None:
            return None
        return (lt, rt)

    tree = build(order)
    if tree is None:
        return None
    real = BoronRealization(tree)
    if real.to_structure(ordered=True) != A:
        return None
    return real


def _find_cherry(elems, R):
    for x, y in itertools.combinations(elems, 2):
        rest = [e for e in elems if e not in (x, y)]
        if all((x, y, c, d) in R for c, d in itertools.combinations(rest, 2)):
            return x, y
    return None


def unordered_tree_from_structure(A: FiniteStructure):
    """Some realization tree of an R-only boron structure, or None.

    Works by repeated cherry contraction: x,y form a cherry iff xy|cd holds
    for all other pairs c,d.  The final tree is re-verified against R.
    """
    if A.signature != BORON_SIG:
        return None
    n = A.size
    R = A.rel("R")
    elems = list(range(n))
    merges = []  # (kept, removed)
    work = set(R)
    while len(elems) > 3:
        ch = _find_cherry(elems, work)
        if ch is None:
            return None
        x, y = ch
        merges.append((x, y))
        elems.remove(y)
        work = {t for t in work if y not in t}
    if n == 0:
        return None
    tree = elems[0]
    for e in elems[1:]:
        tree = (tree, e)
    for x, y in reversed(merges):
        paths = leaf_paths(tree)
        tree = replace_at(tree, paths[x], (x, y))
    real = BoronRealization(tree)
    derived = {t for t in itertools.permutations(range(n), 4) if real.quartet(*t)}
    if derived != set(R):
        return None
    return real


def leaf_attachments(tree):
    """All trees obtained by attaching one new leaf (labelled len(leaves)).

    Positions: for every node address and each side, insert a new internal
    node there with the new leaf as one child.  Deterministic order: node
    addresses depth-first, left side before right side.
    """
    new = len(leaves(tree))
    out = []
    for node in all_nodes(tree):
        sub = subtree_at(tree, node)
        out.append(replace_at(tree, node, (new, sub)))
        out.append(replace_at(tree, node, (sub, new)))
    return out


def singleton_tree() -> object:
    return 0


# ---------------------------------------------------------------------------
# partial automorphisms at tree level
#
# The engine below works on (BoronRealization, forward-pair dict) states and
# converts to FiniteStructure/PartialAuto only at module boundaries.  A map
# on the leaves is a partial automorphism iff it preserves <_lex and S: the
# recovery identity then gives R for free.


def realization_of(A) -> BoronRealization:
    if isinstance(A, BoronRealization):
        return A
    real = tree_from_structure(A)
    if real is None:
        raise ValueError("not an ordered boron structure")
    return real


def _meet_len(paths, x, y):
    px, py = paths[x], paths[y]
    i = 0
    m = min(len(px), len(py))
    while i < m and px[i] == py[i]:
        i += 1
    return i


def tree_pauto_ok(real, fwd, touch=None) -> bool:
    """Partial-automorphism test for a forward-pair dict on the leaves.

    With `touch` given, only constraints involving that domain point are
    checked; the rest of the map must already be known valid.
    """
    if len(set(fwd.values())) != len(fwd):
        return False
    paths = real.paths()
    dom = list(fwd)
    md = {}

    def meet(u, v):
        key = (u, v) if u < v else (v, u)
        d = md.get(key)
        if d is None:
            d = _meet_len(paths, u, v)
            md[key] = d
        return d

    for a in (dom if touch is None else [touch]):
        pa, pfa = paths[a], paths[fwd[a]]
        for c in dom:
            if c != a and (pa < paths[c]) != (pfa < paths[fwd[c]]):
                return False

    def s_value(a, b, c):
        return (paths[a] < paths[c] and paths[b] < paths[c]
                and meet(a, b) > meet(b, c))

    def mismatch(a, b, c):
        return s_value(a, b, c) != s_value(fwd[a], fwd[b], fwd[c])

    if touch is None:
        for a, b, c in itertools.permutations(dom, 3):
            if mismatch(a, b, c):
                return False
        return True
    rest = [z for z in dom if z != touch]
    for b, c in itertools.permutations(rest, 2):
        if mismatch(touch, b, c) or mismatch(b, touch, c) \
                or mismatch(b, c, touch):
            return False
    return True


def map_extensions(real, fwd, x, forward=True):
    """One-leaf extensions of the map: place a fresh leaf n and define it
    as the image (forward) or preimage (backward) of x.

    Yields (real2, fwd2) pairs in the deterministic attachment order.
    """
    n = real.size
    for tree in leaf_attachments(real.tree):
        real2 = BoronRealization(tree)
        fwd2 = dict(fwd)
        if forward:
            fwd2[x] = n
            t = x
        else:
            fwd2[n] = x
            t = n
        if tree_pauto_ok(real2, fwd2, touch=t):
            yield real2, fwd2


def map_orbits(fwd) -> list[tuple[int, ...]]:
    """Orbits of a forward-pair dict, fixed points as 1-tuples, in order of
    their starting point."""
    rng = set(fwd.values())
    out = [(x,) for x in sorted(fwd) if fwd[x] == x]
    for s in sorted(x for x in fwd if x not in rng):
        chain = [s]
        while chain[-1] in fwd:
            nxt = fwd[chain[-1]]
            if nxt in chain:
                break  # cyclic; cannot happen for valid lex-preserving maps
            chain.append(nxt)
        out.append(tuple(chain))
    return out


# ---------------------------------------------------------------------------
# orbit geometry: classification and locking


@dataclass(frozen=True)
class OrbitClassification:
    direction: str       # "increasing" | "decreasing" | "trivial"
    meet_direction: str  # "meet-increasing" | "meet-decreasing" | "n/a"
    root: str            # node address of the orbit root t_O
    cone: frozenset      # Cone_{t_O}


def classify_orbit(A, p, O) -> OrbitClassification:
    real = realization_of(A)
    fwd = dict(p.pairs())
    O = tuple(O)
    for i in range(len(O) - 1):
        if fwd.get(O[i]) != O[i + 1]:
            raise ValueError("not an orbit of p")
    return _classify(real, O)


def _classify(real, O):
    O = tuple(O)
    paths = real.paths()
    if len(O) == 1:
        return OrbitClassification("trivial", "n/a", paths[O[0]],
                                   frozenset(O))
    seq = [paths[a] for a in O]
    if all(seq[i] < seq[i + 1] for i in range(len(seq) - 1)):
        direction = "increasing"
    elif all(seq[i] > seq[i + 1] for i in range(len(seq) - 1)):
        direction = "decreasing"
    else:
        raise ValueError("orbit is not lex monotone")
    meets = [common_prefix(seq[i], seq[i + 1]) for i in range(len(seq) - 1)]
    if len(meets) == 1:
        meet_direction = "n/a"
        root = meets[0]
    else:
        def ascending(ms):
            return all(len(ms[i]) < len(ms[i + 1])
                       and ms[i + 1].startswith(ms[i])
                       for i in range(len(ms) - 1))
        if ascending(meets):
            meet_direction = "meet-increasing"
            root = meets[0]
        elif ascending(meets[::-1]):
            meet_direction = "meet-decreasing"
            root = meets[-1]
        else:
            raise ValueError("meet chain of the orbit is not monotone")
    return OrbitClassification(direction, meet_direction, root,
                               real.cone(root))


def _node_between(u, v, w):
    # u < v < w in the initial-segment order on tree nodes
    return (len(u) < len(v) < len(w) and v.startswith(u)
            and w.startswith(v))


def _lock_sets(real, fwd, O):
    """Points locked / meet-locked by the orbit O.

    Quantifies over all pairs of one-leaf extensions defining q^{-1}(a_0)
    and then q(a_m); any extension defining both restricts to the added two
    points, so this enumeration is exact.  An empty family leaves the
    universal conditions vacuously true.
    """
    O = tuple(O)
    if len(O) < 3:
        raise ValueError("locking needs an orbit with at least 3 points")
    cls = _classify(real, O)
    inc = cls.direction == "increasing"
    minc = cls.meet_direction == "meet-increasing"
    a0, am = O[0], O[-1]
    back_label, fwd_label = real.size, real.size + 1
    locked = set(range(real.size))
    meet_locked = set(range(real.size))
    for realb, fb in map_extensions(real, fwd, a0, forward=False):
        for realf, ff in map_extensions(realb, fb, am, forward=True):
            paths = realf.paths()
            pb, pf = paths[back_label], paths[fwd_label]
            t_pre = common_prefix(pb, paths[a0])    # t_{-1}
            t_post = common_prefix(paths[am], pf)   # t_m
            lo, hi = (pb, pf) if pb < pf else (pf, pb)
            anchor = pf if minc else pb
            for x in list(locked):
                if not (lo <= paths[x] <= hi):
                    locked.discard(x)
            for x in list(meet_locked):
                px = paths[x]
                if minc:
                    side = (pf < px) if inc else (px < pf)
                else:
                    side = (px < pb) if inc else (pb < px)
                mloc = common_prefix(px, anchor)
                if not (side and _node_between(t_pre, mloc, t_post)):
                    meet_locked.discard(x)
            if not locked and not meet_locked:
                return locked, meet_locked
    return locked, meet_locked


def locking_predicates(A, p, x, O) -> dict:
    real = realization_of(A)
    fwd = dict(p.pairs())
    O = tuple(O)
    locked, mlocked = _lock_sets(real, fwd, O)
    cone = _classify(real, O).cone
    return {"locked": x in locked,
            "meet_locked": x in mlocked,
            "cone_locked": x in cone and (x in locked or x in mlocked)}


def _cone_locked_set(real, fwd):
    out = set()
    for O in map_orbits(fwd):
        if len(O) < 3:
            continue
        locked, mlocked = _lock_sets(real, fwd, O)
        out |= _classify(real, O).cone & (locked | mlocked)
    return out


def _cl_runs(real, fwd):
    cl = _cone_locked_set(real, fwd)
    runs, cur = [], []
    for z in real.lex_order():
        if z in cl:
            cur.append(z)
        elif cur:
            runs.append(tuple(cur))
            cur = []
    if cur:
        runs.append(tuple(cur))
    return runs


def cone_lock_intervals(A, p) -> list[tuple[int, ...]]:
    """Maximal lex runs of points cone-locked by some orbit of p."""
    real = realization_of(A)
    return _cl_runs(real, dict(p.pairs()))


# ---------------------------------------------------------------------------
# segment surgery


def attach(A, segment, e_list=(), f_list=()):
    """A(x, y, E, F): graft trees onto the segment (x, y).

    Left attachments end lex-below the old cone at y, in list order; right
    attachments end lex-above it; left roots sit above right roots.  New
    leaves take labels after A's, e_list members first.
    """
    real = realization_of(A)
    x, y = segment
    if not (len(y) == len(x) + 1 and y.startswith(x)):
        raise ValueError("(x, y) is not a segment")
    sub = subtree_at(real.tree, y)
    label = real.size
    etrees, ftrees = [], []
    for src, acc in ((e_list, etrees), (f_list, ftrees)):
        for item in src:
            t = item.tree if isinstance(item, BoronRealization) else item
            k = len(leaves(t))
            acc.append(relabel_tree(t, {i: label + i for i in range(k)}))
            label += k
    for t in ftrees:
        sub = (sub, t)
    for t in reversed(etrees):
        sub = (t, sub)
    return BoronRealization(replace_at(real.tree, y, sub)).to_structure(True)


def to_dot(A, p=None) -> str:
    """Graphviz DOT text for a realization; leaves show lex rank and orbit."""
    real = realization_of(A)
    order = real.lex_order()
    orbit_of = {}
    if p is not None:
        for i, O in enumerate(map_orbits(dict(p.pairs()))):
            for z in O:
                orbit_of[z] = i
    lines = ["digraph boron {", "  node [shape=point];"]
    for node in all_nodes(real.tree):
        sub = subtree_at(real.tree, node)
        nid = "n%s" % (node or "root")
        if is_leaf(sub):
            tag = "%d (lex %d%s)" % (sub, order.index(sub),
                                     ", orbit %d" % orbit_of[sub]
                                     if sub in orbit_of else "")
            lines.append('  %s [shape=circle, label="%s"];' % (nid, tag))
        if node:
            pid = "n%s" % (node[:-1] or "root")
            lines.append("  %s -> %s;" % (pid, nid))
    lines.append("}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# escape engine


_LOCK_CACHE = {}


def _lock_intervals(real, fwd):
    """Lex-sorted lock intervals of fwd, one per (orbit, lock kind)."""
    key = (real.tree, tuple(sorted(fwd.items())))
    hit = _LOCK_CACHE.get(key)
    if hit is not None:
        return hit
    out = []
    for O in map_orbits(fwd):
        if len(O) < 3:
            continue
        locked, mlocked = _lock_sets(real, fwd, O)
        cone = _classify(real, O).cone
        order = real.lex_order()
        for part in (cone & locked, cone & mlocked):
            if part:
                out.append(tuple(z for z in order if z in part))
    if len(_LOCK_CACHE) > 4096:
        _LOCK_CACHE.clear()
    _LOCK_CACHE[key] = tuple(out)
    return _LOCK_CACHE[key]


def _push_past(real, fmap, y, other):
    """Walk y along fmap until it either clears the `other` interval
    containing y or lands free of all lock intervals of one of the two
    maps.  The first application probes every fresh-leaf placement; the
    rest of the walk is greedy (rightmost placement).

    Returns (real, fmap, signed_power, landing_point) or None.
    """
    paths = real.paths()
    inv = {v: u for u, v in fmap.items()}
    if y in fmap and fmap[y] != y:
        eps = 1 if paths[fmap[y]] > paths[y] else -1
    elif y in inv and inv[y] != y:
        eps = 1 if paths[inv[y]] < paths[y] else -1
    else:
        eps = 1

    def done(r, f, z):
        ps = r.paths()
        own = _lock_intervals(r, f)
        if not any(z in iv for iv in own):
            return True
        theirs = _lock_intervals(r, other)
        holding = [iv for iv in theirs if y in iv]
        if not holding:
            return True
        if ps[z] <= ps[y]:
            return not any(z in iv for iv in theirs)
        edge = min(ps[iv[-1]] for iv in holding)
        return ps[z] > edge

    def successors(r, f, z):
        src = f if eps == 1 else {v: u for u, v in f.items()}
        if z in src:
            return [(r, f, src[z])]
        succs = [(r2, f2, r.size)
                 for r2, f2 in map_extensions(r, f, z, forward=eps == 1)]
        succs.sort(key=lambda t: t[0].paths()[t[2]], reverse=True)
        return succs

    first = successors(real, fmap, y)
    for st in first[:12]:
        if done(*st):
            return st[0], st[1], eps, st[2]
    if not first:
        return None
    state = first[0]
    for k in range(2, 2 * real.size + 17):
        succs = successors(*state)
        if not succs:
            return None
        state = succs[0]
        if done(*state):
            return state[0], state[1], eps * k, state[2]
    return None


def _escape_bfs(real, fp, fq, y, depth=4, width=256):
    """Breadth-first search for a short word freeing y, exploring every
    single application of either map in either direction and every
    fresh-leaf placement.  Returns the path as a list of
    (letter, eps, real, fp, fq, landing) entries, or None.
    """
    def free(r, a, b, z):
        return (not any(z in iv for iv in _lock_intervals(r, a))
                or not any(z in iv for iv in _lock_intervals(r, b)))

    def successors(r, a, b, z):
        for letter, f in ((0, a), (1, b)):
            for eps in (1, -1):
                src = f if eps == 1 else {v: u for u, v in f.items()}
                if z in src:
                    cand = [(r, dict(f), src[z])]
                else:
                    cand = [(r2, f2, r.size)
                            for r2, f2 in map_extensions(r, f, z,
                                                         forward=eps == 1)]
                for r2, f2, z2 in cand:
                    if letter == 0:
                        yield letter, eps, r2, f2, dict(b), z2
                    else:
                        yield letter, eps, r2, dict(a), f2, z2

    frontier = [(real, fp, fq, y, [])]
    seen = {(real.tree, tuple(sorted(fp.items())),
             tuple(sorted(fq.items())), y)}
    for _ in range(depth):
        nxt = []
        for r, a, b, z, path in frontier:
            for letter, eps, r2, a2, b2, z2 in successors(r, a, b, z):
                key = (r2.tree, tuple(sorted(a2.items())),
                       tuple(sorted(b2.items())), z2)
                if key in seen:
                    continue
                seen.add(key)
                step = (letter, eps, r2, a2, b2, z2)
                if free(r2, a2, b2, z2):
                    return path + [step]
                nxt.append((r2, a2, b2, z2, path + [step]))
        frontier = nxt[:width]
        if not frontier:
            return None
    return None
def sb2_escape_word(A, p, q, x):
    """Free a point from the cone-lock intervals of two partial maps.

    While the walked point is cone-locked by both maps, one map pushes it
    past the other map's lock interval, or into a position free of one
    map's locks altogether.  The map whose own interval ends sooner is
    tried first (ties go to the second map, pushed by the letter t); if
    its orbit through the point cannot clear anything, the roles swap.
    At most n_p + n_q pushes are made, where n_i counts the lock intervals
    of each map at entry.  Every non-trivial orbit of p and q must have at
    least 3 points.

    Returns (A2, p2, q2, word, trace) where word over the letters s, t
    satisfies: word(p2, q2)(x) is defined and avoids the lock intervals of
    p2 or those of q2.
    """
    from .pauto import PartialAuto, GroupWord, evaluate_word

    real = realization_of(A)
    fp, fq = dict(p.pairs()), dict(q.pairs())
    for f in (fp, fq):
        for O in map_orbits(f):
            if len(O) == 2:
                raise ValueError("non-trivial orbits need >= 3 points")
    budget = len(_lock_intervals(real, fp)) + len(_lock_intervals(real, fq))
    word = GroupWord.identity()
    y = x
    trace = []
    for _ in range(budget):
        ivs_p = [iv for iv in _lock_intervals(real, fp) if y in iv]
        ivs_q = [iv for iv in _lock_intervals(real, fq) if y in iv]
        if not ivs_p or not ivs_q:
            break
        paths = real.paths()
        right_p = max(paths[iv[-1]] for iv in ivs_p)
        right_q = max(paths[iv[-1]] for iv in ivs_q)
        if right_p >= right_q:
            attempts = [(1, fq, fp), (0, fp, fq)]
        else:
            attempts = [(0, fp, fq), (1, fq, fp)]
        for letter, fmap, other in attempts:
            pushed = _push_past(real, dict(fmap), y, other)
            if pushed is not None:
                break
        else:
            # neither map clears on its own; a short word mixing both
            # letters and trying every placement usually frees the point
            path = _escape_bfs(real, fp, fq, y)
            if path is None:
                raise RuntimeError("neither map can clear the lock intervals")
            for letter, eps, real, fp, fq, y in path:
                word = GroupWord.generator(letter, eps) * word
                trace.append({"letter": "t" if letter else "s",
                              "power": eps, "landed": y})
            continue
        real, fmap, k, y = pushed
        if letter == 1:
            fq = fmap
        else:
            fp = fmap
        word = GroupWord.generator(letter, k) * word
        trace.append({"letter": "t" if letter else "s", "power": k,
                      "landed": y})
    else:
        if any(y in iv for iv in _lock_intervals(real, fp)) \
                and any(y in iv for iv in _lock_intervals(real, fq)):
            raise RuntimeError("escape exceeded the n_p + n_q step bound")
    A2 = real.to_structure(True)
    p2 = PartialAuto(sorted(fp.items()))
    q2 = PartialAuto(sorted(fq.items()))
    if evaluate_word(word, (p2, q2), x) != y:
        raise RuntimeError("escape word failed re-verification")
    return A2, p2, q2, word, tuple(trace)

# ---------------------------------------------------------------------------
# normal forms
#
# A partial automorphism is brought to a canonical shape: the carrier is
# covered by fixed points and pairs of lex-intervals, each pair carried by
# two witness orbits P <_lex Q whose meet chains alternate along a common
# root path, with every other non-trivial orbit running inside P or Q one
# gap per application.


def _rank(real):
    return {x: i for i, x in enumerate(real.lex_order())}


def _span(rank, O):
    a, b = rank[O[0]], rank[O[-1]]
    return (a, b) if a <= b else (b, a)


def orbits_intertwine(real, O, P) -> bool:
    """The open lex intervals spanned by the two orbits intersect."""
    rank = _rank(real)
    (a, b), (c, d) = _span(rank, O), _span(rank, P)
    return max(a, c) < min(b, d)


def orbit_lex_contained(real, O, P) -> bool:
    rank = _rank(real)
    (a, b), (c, d) = _span(rank, O), _span(rank, P)
    return c <= a and b <= d


def orbits_meet_intertwine(real, fwd, O, P) -> bool:
    """Some point of one orbit is meet-locked by the other."""
    if len(O) < 3 or len(P) < 3:
        return False
    co, cp = _classify(real, O), _classify(real, P)
    if co.direction == cp.direction:
        return False
    if co.meet_direction != cp.meet_direction:
        return False
    # meet-locked points live in the other orbit's root cone
    if not (set(O) & cp.cone or set(P) & co.cone):
        return False
    return bool(set(O) & _lock_sets(real, fwd, P)[1]
                or set(P) & _lock_sets(real, fwd, O)[1])


def orbit_equivalence_classes(real, fwd) -> list[list[tuple]]:
    """Partition the non-trivial orbits into the classes generated by
    intertwining and meet-intertwining."""
    orbs = [O for O in map_orbits(fwd) if len(O) > 1]
    parent = list(range(len(orbs)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(orbs)):
        for j in range(i + 1, len(orbs)):
            if find(i) == find(j):
                continue
            if orbits_intertwine(real, orbs[i], orbs[j]) \
                    or orbits_meet_intertwine(real, fwd, orbs[i], orbs[j]):
                parent[find(i)] = find(j)
    groups = {}
    for i, O in enumerate(orbs):
        groups.setdefault(find(i), []).append(O)
    return list(groups.values())


def _orbit_growth_moves(real, fwd):
    for O in map_orbits(fwd):
        if len(O) == 1:
            continue
        yield from map_extensions(real, fwd, O[-1], forward=True)
        yield from map_extensions(real, fwd, O[0], forward=False)


def find_coarsening_extension(real, fwd, depth=1):
    """Search for an extension in which two orbits that were neither
    intertwining nor meet-intertwining become related, or merge into one
    orbit.  Bounded at `depth` added leaves; returns (real2, fwd2) or None.
    """
    base = [O for O in map_orbits(fwd) if len(O) > 1]
    reps = [O[0] for O in base]
    related = set()
    for i in range(len(base)):
        for j in range(i + 1, len(base)):
            if orbits_intertwine(real, base[i], base[j]) \
                    or orbits_meet_intertwine(real, fwd, base[i], base[j]):
                related.add((i, j))

    def offending(r2, f2):
        orbs2 = map_orbits(f2)
        where = {x: k for k, O in enumerate(orbs2) for x in O}
        for i in range(len(reps)):
            for j in range(i + 1, len(reps)):
                ki, kj = where[reps[i]], where[reps[j]]
                if ki == kj:
                    return True
                if (i, j) in related:
                    continue
                if orbits_intertwine(r2, orbs2[ki], orbs2[kj]) \
                        or orbits_meet_intertwine(r2, f2, orbs2[ki],
                                                  orbs2[kj]):
                    return True
        return False

    frontier = [(real, fwd)]
    for _ in range(depth):
        nxt = []
        for r, f in frontier:
            for r2, f2 in _orbit_growth_moves(r, f):
                if offending(r2, f2):
                    return r2, f2
                nxt.append((r2, f2))
        frontier = nxt
    return None


def _insert_leaf(real, addr, side):
    """Insert a fresh leaf beside the subtree at addr (side 0 = left)."""
    sub = subtree_at(real.tree, addr)
    new = real.size
    node = (new, sub) if side == 0 else (sub, new)
    return BoronRealization(replace_at(real.tree, addr, node)), new


def _orbit_of(fwd, x):
    for O in map_orbits(fwd):
        if x in O:
            return O
    return (x,)


def _meets_chain(real, O):
    """Meets of consecutive orbit points, in application order."""
    return [real.meet(O[i], O[i + 1]) for i in range(len(O) - 1)]


def _is_anc(u, v):
    return len(u) < len(v) and v.startswith(u)


def _chain_depthwise(real, O):
    """(points, meets) of the orbit enumerated shallow-to-deep meets."""
    ch = _meets_chain(real, O)
    if len(ch) >= 2 and _is_anc(ch[1], ch[0]):
        return tuple(reversed(O)), list(reversed(ch))
    return tuple(O), ch


def _pad_witness(real, fwd, O, deep_end, lo=None, hi=None, rank_ok=None):
    """Extend the witness orbit by one point at the shallow or deep end of
    its meet chain, keeping the new meet strictly between lo and hi in the
    tree order.  Returns (real2, fwd2, new_point) or None.
    """
    pts, _ = _chain_depthwise(real, O)
    meet_inc = pts == tuple(O)
    # which application end carries the requested chain end
    forward = deep_end if meet_inc else not deep_end
    anchor = O[-1] if forward else O[0]
    best = None
    for real2, fwd2 in map_extensions(real, fwd, anchor, forward=forward):
        new = real.size
        m = real2.meet(anchor, new)
        if lo is not None and not _is_anc(lo, m):
            continue
        if hi is not None and not _is_anc(m, hi):
            continue
        if rank_ok is not None and not rank_ok(real2, new):
            continue
        best = (real2, fwd2, new)
        break
    return best


def _pad_contained(real, fwd, O, W):
    """Extend a contained orbit one application step into the next free
    gap of its witness W.  Returns (real2, fwd2) or None."""
    rank = _rank(real)
    wl = list(W) if rank[W[0]] < rank[W[-1]] else list(reversed(W))

    def gap(x):
        i = 0
        while i < len(wl) and rank[wl[i]] < rank[x]:
            i += 1
        return i - 1

    inc = rank[O[0]] < rank[O[-1]]
    lo, hi = gap(O[0]), gap(O[-1])
    if not inc:
        lo, hi = hi, lo
    room_right = hi < len(wl) - 2
    room_left = lo > 0
    moves = []
    if room_right if inc else room_left:
        moves.append(True)
    if room_left if inc else room_right:
        moves.append(False)
    for forward in moves:
        anchor = O[-1] if forward else O[0]
        for real2, fwd2 in map_extensions(real, fwd, anchor, forward=forward):
            return real2, fwd2
    return None


class NormalFormError(RuntimeError):
    """The bounded normal-form construction failed to stabilize."""


def _hang_side(real, O):
    """0 if the orbit's points hang left of its meet chain, 1 if right,
    None if mixed."""
    pts, ch = _chain_depthwise(real, O)
    paths = real.paths()
    # the final point necessarily hangs opposite its predecessor, so only
    # the first n points define the side
    sides = {paths[pts[i]][len(ch[i])] for i in range(len(pts) - 1)}
    if len(sides) != 1:
        return None
    return int(sides.pop())


def _fresh_partner(real, fwd, W):
    """Synthesize a fresh orbit of the same length as W, hanging on the
    opposite side with meets interleaving W's chain."""
    n = len(W) - 1
    pts, ch = _chain_depthwise(real, W)
    meet_inc = pts == tuple(W)
    wside = _hang_side(real, W)
    if wside is None:
        raise NormalFormError("witness orbit hangs on both sides")
    vside = 1 - wside
    # when W carries the shallow-first chain the partner's meets go just
    # below each of W's; otherwise just above
    w_is_t = (wside == 0) == meet_inc
    vs = []
    for i in range(n + 1):
        ch = [real.meet(pts[j], pts[j + 1]) for j in range(n)]
        paths = real.paths()
        if i == n or (w_is_t and i == n - 1):
            addr = paths[pts[n]]
        else:
            addr = ch[i + 1] if w_is_t else ch[i]
        real, new = _insert_leaf(real, addr, vside)
        vs.append(new)
    vtuple = tuple(vs) if meet_inc else tuple(reversed(vs))
    fwd = dict(fwd)
    for a, b in zip(vtuple, vtuple[1:]):
        fwd[a] = b
    if not tree_pauto_ok(real, fwd):
        raise NormalFormError("fresh partner orbit failed validation")
    return real, fwd, vtuple


def _build_part(real, fwd, reps, avoid):
    """Grow a witness pair covering one orbit-equivalence class and pad the
    contained orbits.  reps holds one representative point per class orbit;
    avoid holds point pairs delimiting spans of already-built parts.

    Returns (real, fwd, P, Q) with P the lex-left witness, both in
    application order.
    """
    def orbits():
        return [_orbit_of(fwd, r) for r in reps]

    def sideof(O):
        s = _hang_side(real, O)
        if s is None:
            raise NormalFormError("orbit hangs on both sides")
        return s

    def rank_ok(real2, new):
        rank = _rank(real2)
        for lo, hi in avoid:
            if rank[lo] < rank[new] < rank[hi]:
                return False
        return True

    # seed selection: widest span per hanging side
    rank = _rank(real)
    wl_rep = wr_rep = None
    best = [-1, -1]
    for O in orbits():
        s = sideof(O)
        a, b = _span(rank, O)
        if b - a > best[s]:
            best[s] = b - a
            if s == 0:
                wl_rep = O[0]
            else:
                wr_rep = O[0]

    bound = 8 * sum(len(O) for O in orbits()) + 6 * real.size + 60
    for _ in range(bound):
        rank = _rank(real)
        WL = _orbit_of(fwd, wl_rep) if wl_rep is not None else None
        WR = _orbit_of(fwd, wr_rep) if wr_rep is not None else None

        if WL is None or WR is None:
            W = WL if WL is not None else WR
            # cover the same-side orbits and reach the needed length first
            need = max((len(O) for O in orbits() if set(O) != set(W)),
                       default=2)
            deficiency = None
            span_w = _span(rank, W)
            for O in orbits():
                if set(O) == set(W):
                    continue
                a, b = _span(rank, O)
                if a < span_w[0]:
                    deficiency = ("span", False)
                    break
                if b > span_w[1]:
                    deficiency = ("span", True)
                    break
            if deficiency is None and len(W) < max(need + 1, 3):
                deficiency = ("len", True)
            if deficiency is None:
                real, fwd, V = _fresh_partner(real, fwd, W)
                if WL is None:
                    wl_rep = V[0]
                else:
                    wr_rep = V[0]
                reps = list(reps) + [V[0]]
                continue
            kind, deep = deficiency
            # lex-outward equals chain-shallow for the left witness and the
            # mirror for the right one; spans only ever grow outward
            if kind == "span":
                outward_left = not deep
                deep_end = (sideof(W) == 0) == (not outward_left)
            else:
                deep_end = True
            got = _pad_witness(real, fwd, W, deep_end, rank_ok=rank_ok)
            if got is None:
                raise NormalFormError("cannot grow lone witness")
            real, fwd, _ = got
            continue

        # both witnesses exist: repair the alternation of the meet chains
        # the witness with the shallow-first chain carries the t labels:
        # the left one for meet-increasing classes, the right one for the
        # mirror image
        meet_inc = _classify(real, WL).meet_direction == "meet-increasing"
        WT, WS = (WL, WR) if meet_inc else (WR, WL)
        ptsT, chT = _chain_depthwise(real, WT)
        ptsS, chS = _chain_depthwise(real, WS)
        nodes = [(m, "t") for m in chT] + [(m, "s") for m in chS]
        for (u, _), (v, _) in itertools.combinations(nodes, 2):
            if u != v and not _is_anc(u, v) and not _is_anc(v, u):
                raise NormalFormError("witness meet chains diverge")
        nodes.sort(key=lambda t: len(t[0]))
        labels = "".join(l for _, l in nodes)

        fix = None
        if labels[0] == "s":
            fix = (WT, False, None, chS[0])
        elif labels[-1] == "t":
            fix = (WS, True, chT[-1], None)
        else:
            for k in range(len(nodes) - 1):
                if nodes[k][1] != nodes[k + 1][1]:
                    continue
                u, v = nodes[k][0], nodes[k + 1][0]
                if nodes[k][1] == "t":
                    other, ch = WS, chS
                else:
                    other, ch = WT, chT
                if len(v) <= len(ch[0]):
                    fix = (other, False, u, v)
                elif len(u) >= len(ch[-1]):
                    fix = (other, True, u, v)
                else:
                    raise NormalFormError(
                        "interior misalignment of witness chains")
                break
        if fix is not None:
            W, deep, lo, hi = fix
            got = _pad_witness(real, fwd, W, deep, lo, hi, rank_ok)
            if got is None:
                raise NormalFormError("cannot repair chain alternation")
            real, fwd, _ = got
            continue

        # coverage: each contained orbit's span inside its witness's span
        fix = None
        for O in orbits():
            if set(O) in (set(WL), set(WR)):
                continue
            W = WL if sideof(O) == 0 else WR
            a, b = _span(rank, O)
            wa, wb = _span(rank, W)
            if a < wa:
                fix = (W, False)
            elif b > wb:
                fix = (W, True)
            if fix:
                outward_left = not fix[1]
                deep_end = (sideof(W) == 0) == (not outward_left)
                got = _pad_witness(real, fwd, W, deep_end, rank_ok=rank_ok)
                if got is None:
                    raise NormalFormError("cannot grow witness span")
                real, fwd, _ = got
                break
        if fix is not None:
            continue

        # lengths: witnesses equal (implied by alternation), contained
        # orbits exactly one point shorter
        n = len(WL) - 1
        fix = None
        for O in orbits():
            if set(O) in (set(WL), set(WR)):
                continue
            if len(O) > n:
                got = _pad_witness(real, fwd, WT, True, chS[-1], None,
                                   rank_ok)
                if got is None:
                    raise NormalFormError("cannot lengthen witness")
                real, fwd, _ = got
                fix = True
                break
            if len(O) < n:
                got = _pad_contained(real, fwd, O,
                                     WL if sideof(O) == 0 else WR)
                if got is None:
                    raise NormalFormError("cannot pad contained orbit")
                real, fwd = got
                fix = True
                break
        if fix is not None:
            continue

        if len(WL) < 3:
            got = _pad_witness(real, fwd, WT, True, chS[-1], None, rank_ok)
            if got is None:
                raise NormalFormError("cannot reach minimal length")
            real, fwd, _ = got
            continue

        P, Q = (WL, WR) if _span(rank, WL) < _span(rank, WR) else (WR, WL)
        return real, fwd, tuple(P), tuple(Q)
    raise NormalFormError("part construction did not stabilize")


@dataclass(frozen=True)
class NormalFormCertificate:
    """Witness data for a partial automorphism in normal form.

    partition entries are ("point", x) for fixed points or
    ("pair", (a, b), (c, d), P, Q) where [a,b] and [c,d] are the closed lex
    intervals spanned by the witness orbits P and Q (application order).
    """

    tree: object
    pairs: tuple
    partition: tuple
    depth: int

    def to_json(self) -> dict:
        parts = []
        for e in self.partition:
            if e[0] == "point":
                parts.append({"kind": "point", "x": e[1]})
            else:
                parts.append({"kind": "pair",
                              "left": list(e[1]), "right": list(e[2]),
                              "P": list(e[3]), "Q": list(e[4])})
        return {"tree": repr(self.tree), "pairs": [list(t) for t in self.pairs],
                "partition": parts, "depth": self.depth}

    def pair_parts(self):
        return [e for e in self.partition if e[0] == "pair"]


def _closed_span_pts(real, O):
    rank = _rank(real)
    a, b = (O[0], O[-1]) if rank[O[0]] < rank[O[-1]] else (O[-1], O[0])
    return a, b


def _snf_ok(real, fwd, P, Q, strict_pair=True):
    """Simple-normal-form conditions for the restriction carried by the
    witness orbits P and Q.  The orbit whose meet chain starts shallower
    plays the role of the first witness; either lex orientation is valid.
    """
    rank = _rank(real)
    if len(P) != len(Q) or len(P) < 3:
        return False
    n = len(P) - 1
    _, chP = _chain_depthwise(real, P)
    _, chQ = _chain_depthwise(real, Q)
    for ch in (chP, chQ):
        if any(not _is_anc(ch[i], ch[i + 1]) for i in range(len(ch) - 1)):
            return False
    if _is_anc(chQ[0], chP[0]):
        chP, chQ = chQ, chP
    for i in range(n):
        if not _is_anc(chP[i], chQ[i]):
            return False
        if i < n - 1 and not _is_anc(chQ[i], chP[i + 1]):
            return False
    spanP = _span(rank, P)
    spanQ = _span(rank, Q)
    if spanQ < spanP:
        spanP, spanQ = spanQ, spanP
    if spanP[1] >= spanQ[0]:
        return False

    def in_part(x):
        return spanP[0] <= rank[x] <= spanP[1] \
            or spanQ[0] <= rank[x] <= spanQ[1]

    for O in map_orbits(fwd):
        if len(O) == 1:
            if in_part(O[0]) and not (spanP[1] < rank[O[0]] < spanQ[0]):
                return False
            continue
        if set(O) in (set(P), set(Q)):
            continue
        if not any(in_part(x) for x in O):
            continue
        if not strict_pair:
            continue
        if not (orbit_lex_contained(real, O, P)
                or orbit_lex_contained(real, O, Q)):
            return False
        if len(O) != n:
            return False
    return True


def to_normal_form(A, p, depth=1, max_rounds=8):
    """Extend (A, p) so the result is in normal form.

    Returns (A2, p2, NormalFormCertificate); original elements keep their
    labels, so the embedding is the identity.  Raises NormalFormError when
    the bounded construction does not stabilize.
    """
    from .pauto import PartialAuto

    real = realization_of(A)
    fwd = dict(p.pairs()) if hasattr(p, "pairs") else dict(p)
    if not tree_pauto_ok(real, fwd):
        raise ValueError("not a partial automorphism")

    for _ in range(max_rounds):
        # condition (1): carrier covered, non-trivial orbits of size >= 3
        progress = True
        while progress:
            progress = False
            touched = set(fwd) | set(fwd.values())
            for x in range(real.size):
                if x in touched:
                    continue
                f2 = dict(fwd)
                f2[x] = x
                if tree_pauto_ok(real, f2, touch=x):
                    fwd = f2
                else:
                    got = next(map_extensions(real, fwd, x, True), None) \
                        or next(map_extensions(real, fwd, x, False), None)
                    if got is None:
                        raise NormalFormError("cannot cover point %d" % x)
                    real, fwd = got
                progress = True
                break
            if progress:
                continue
            for O in map_orbits(fwd):
                if 1 < len(O) < 3:
                    got = next(map_extensions(real, fwd, O[-1], True),
                               None) \
                        or next(map_extensions(real, fwd, O[0], False),
                                None)
                    if got is None:
                        raise NormalFormError("cannot grow 2-orbit")
                    real, fwd = got
                    progress = True
                    break

        # condition (2): adopt any merging/intertwining extension
        for _ in range(12 * real.size):
            ext = find_coarsening_extension(real, fwd, depth)
            if ext is None:
                break
            real, fwd = ext
        else:
            raise NormalFormError("coarsening saturation did not stabilize")

        # condition (3): one witness pair per orbit-equivalence class
        pairs = []
        avoid = []
        for cls in orbit_equivalence_classes(real, fwd):
            reps = [O[0] for O in cls]
            real, fwd, P, Q = _build_part(real, fwd, reps, avoid)
            pairs.append((P, Q))
            avoid.append(_closed_span_pts(real, P))
            avoid.append(_closed_span_pts(real, Q))

        partition = tuple(
            [("pair", _closed_span_pts(real, P), _closed_span_pts(real, Q),
              P, Q) for P, Q in pairs]
            + [("point", x) for x in sorted(fwd) if fwd[x] == x])
        cert = NormalFormCertificate(real.tree, tuple(sorted(fwd.items())),
                                     partition, depth)
        A2 = real.to_structure(True)
        p2 = PartialAuto(sorted(fwd.items()))
        report = check_normal_form(A2, p2, cert, depth=depth)
        if all(report.values()):
            return A2, p2, cert
    raise NormalFormError("normal form not reached: %s" % (
        [k for k, v in report.items() if not v]))


def check_normal_form(A, p, cert, depth=1) -> dict:
    """Definition-level verification of the normal-form conditions.
    Returns a dict of named booleans."""
    real = realization_of(A)
    fwd = dict(p.pairs()) if hasattr(p, "pairs") else dict(p)
    rank = _rank(real)
    report = {}

    touched = set(fwd) | set(fwd.values())
    report["carrier_covered"] = touched == set(range(real.size))
    report["orbit_sizes"] = all(
        len(O) >= 3 for O in map_orbits(fwd) if len(O) > 1)
    report["not_coarsenable"] = \
        find_coarsening_extension(real, fwd, depth) is None

    seen = set()
    disjoint = True
    parts_ok = True
    for e in cert.partition:
        if e[0] == "point":
            pts = {e[1]}
            parts_ok &= fwd.get(e[1]) == e[1]
        else:
            _, (a, b), (c, d), P, Q = e
            pts = {x for x in range(real.size)
                   if rank[a] <= rank[x] <= rank[b]
                   or rank[c] <= rank[x] <= rank[d]}
            orbs = [set(O) for O in map_orbits(fwd)]
            parts_ok &= set(P) in orbs and set(Q) in orbs
            parts_ok &= _snf_ok(real, fwd, P, Q)
            parts_ok &= {a, b} == set(_closed_span_pts(real, P))
            parts_ok &= {c, d} == set(_closed_span_pts(real, Q))
        if pts & seen:
            disjoint = False
        seen |= pts
    report["partition_disjoint"] = disjoint
    report["partition_covers"] = seen == set(range(real.size))
    report["parts_valid"] = parts_ok
    return report


def _restrict_tree(tree, keep):
    if is_leaf(tree):
        return tree if tree in keep else None
    l = _restrict_tree(tree[0], keep)
    r = _restrict_tree(tree[1], keep)
    if l is None:
        return r
    if r is None:
        return l
    return (l, r)


def star_expansion(cert: NormalFormCertificate, X):
    """The part X enlarged by one representative per maximal proper
    sub-cone of another part, with the map extended by the identity.

    X is an entry of cert.partition.  Returns (structure, PartialAuto)
    relabelled to 0..m-1; for a pair part the result is re-verified to be
    in simple normal form.
    """
    from .pauto import PartialAuto
    from .core import FiniteStructure

    real = BoronRealization(cert.tree)
    if X[0] == "point":
        return (FiniteStructure.unchecked(
            ORDERED_BORON_SIG, 1,
            {"R": frozenset(), "S": frozenset(), "<": frozenset()}),
            PartialAuto([(0, 0)]))

    def part_root(e):
        pts = list(e[3]) + list(e[4]) if e[0] == "pair" else [e[1]]
        paths = real.paths()
        node = paths[pts[0]]
        for x in pts[1:]:
            node = common_prefix(node, paths[x])
        return node

    _, (a, b), (c, d), P, Q = X
    rank = _rank(real)
    own = {x for x in range(real.size)
           if rank[a] <= rank[x] <= rank[b]
           or rank[c] <= rank[x] <= rank[d]}
    root_x = part_root(X)
    inner = [part_root(e) for e in cert.partition
             if e is not X and _is_anc(root_x, part_root(e))]
    maximal = [u for u in inner
               if not any(_is_anc(v, u) for v in inner if v != u)]
    reps = []
    for u in sorted(set(maximal)):
        leaf = min(real.cone(u), key=lambda z: rank[z])
        reps.append(leaf)

    keep = sorted(own | set(reps))
    relabel = {x: i for i, x in enumerate(keep)}
    sub = _restrict_tree(relabel_tree(cert.tree, relabel),
                         set(relabel.values()))
    real2 = BoronRealization(sub)
    fwd = dict(cert.pairs)
    fwd2 = {relabel[x]: relabel[x] for x in reps}
    for u, v in fwd.items():
        if u in own and v in own:
            fwd2[relabel[u]] = relabel[v]
    if not tree_pauto_ok(real2, fwd2):
        raise NormalFormError("star expansion failed validation")
    P2 = tuple(relabel[x] for x in P)
    Q2 = tuple(relabel[x] for x in Q)
    if not _snf_ok(real2, fwd2, P2, Q2):
        raise NormalFormError("star expansion not in simple normal form")
    return real2.to_structure(True), PartialAuto(sorted(fwd2.items()))
