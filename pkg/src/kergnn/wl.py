"""1-WL color refinement and pairwise indistinguishability testing.

Colors are interned canonically: each distinct (own color, sorted multiset of
neighbor colors) tuple gets the next integer id from a table. `wl_test` runs
both graphs against a shared table so their histograms are comparable.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .graphs import Graph

__all__ = ["ColorHistogram", "wl_refine", "wl_test"]


@dataclass
class ColorHistogram:
    """Color-id counts per refinement round; round 0 is the initial coloring."""

    per_round: list

    @property
    def final(self) -> Counter:
        return self.per_round[-1]

    def num_rounds(self) -> int:
        return len(self.per_round) - 1


def _initial_colors(g: Graph, table: dict) -> list:
    if g.node_labels is not None:
        keys = [("label", int(x)) for x in g.node_labels]
    else:
        keys = [("uniform",)] * g.num_nodes
    return [table.setdefault(k, len(table)) for k in keys]


def _neighbors(g: Graph) -> list:
    return [np.flatnonzero(g.adjacency[v]) for v in range(g.num_nodes)]


def _refine_once(colors: list, nbrs: list, table: dict) -> list:
    out = []
    for v, own in enumerate(colors):
        sig = (own, tuple(sorted(colors[int(u)] for u in nbrs[v])))
        out.append(table.setdefault(sig, len(table)))
    return out


def wl_refine(g: Graph, max_iters: int):
    """Refine until the color partition stops changing, or max_iters rounds.

    Returns (ColorHistogram, rounds_to_stability). Stability is detected as
    the first round whose class count equals the previous round's (each round
    can only split classes, so equal counts mean an identical partition).
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    table: dict = {}
    nbrs = _neighbors(g)
    colors = _initial_colors(g, table)
    history = [Counter(colors)]
    rounds = max_iters
    for it in range(1, max_iters + 1):
        new_colors = _refine_once(colors, nbrs, table)
        history.append(Counter(new_colors))
        stable = len(set(new_colors)) == len(set(colors))
        colors = new_colors
        if stable:
            rounds = it
            break
    return ColorHistogram(per_round=history), rounds


def wl_test(g1: Graph, g2: Graph, max_iters: int) -> str:
    """"distinguishable" iff the shared-table histograms differ at any round."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    table: dict = {}
    nbrs1, nbrs2 = _neighbors(g1), _neighbors(g2)
    c1 = _initial_colors(g1, table)
    c2 = _initial_colors(g2, table)
    if Counter(c1) != Counter(c2):
        return "distinguishable"
    for _ in range(max_iters):
        n1 = _refine_once(c1, nbrs1, table)
        n2 = _refine_once(c2, nbrs2, table)
        if Counter(n1) != Counter(n2):
            return "distinguishable"
        stable1 = len(set(n1)) == len(set(c1))
        stable2 = len(set(n2)) == len(set(c2))
        c1, c2 = n1, n2
        if stable1 and stable2:
            break
    return "indistinguishable"
