"""Tree-shaped rewards: siblings add, ancestors multiply.

Every node contributes the product of the values on its path from the root, so

    f(v) = value(v) * (1 + sum(f(c) for c in children(v)))

and a chain R -> r1 -> ... -> rn evaluates to the same number as
``hierarchy.compose(R, [r1, ..., rn])``.

Text format, one node per line: ``node_id parent_id value`` with ``-`` as the
root's parent. Blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from hierppo.errors import StructureError

ROOT_PARENT = "-"


@dataclass(frozen=True)
class RewardNode:
    value: float
    children: tuple = ()


@dataclass(frozen=True)
class RewardTree:
    nodes: dict
    root: str

    def __post_init__(self):
        validate(self)

    @classmethod
    def from_edges(cls, edges):
        """Build from ``(node_id, parent_id_or_None, value)`` triples; child order follows input order."""
        values, parents, order = {}, {}, []
        for node_id, parent, value in edges:
            if node_id in values:
                raise StructureError(f"node {node_id!r} defined twice")
            values[node_id] = float(value)
            parents[node_id] = parent
            order.append(node_id)
        roots = [n for n in order if parents[n] is None]
        if len(roots) != 1:
            raise StructureError(f"expected exactly one root, found {len(roots)}")
        children = {n: [] for n in order}
        for n in order:
            p = parents[n]
            if p is None:
                continue
            if p not in children:
                raise StructureError(f"node {n!r} names unknown parent {p!r}")
            children[p].append(n)
        nodes = {n: RewardNode(values[n], tuple(children[n])) for n in order}
        return cls(nodes, roots[0])

    @classmethod
    def chain(cls, values):
        """Root-first chain ``values[0] -> values[1] -> ...``."""
        return cls.from_edges(
            (str(i), None if i == 0 else str(i - 1), v) for i, v in enumerate(values)
        )


def validate(tree):
    nodes = tree.nodes
    if tree.root not in nodes:
        raise StructureError(f"root {tree.root!r} is not a node")
    parent_of = {}
    for node_id, node in nodes.items():
        if not math.isfinite(node.value):
            raise StructureError(f"node {node_id!r} has non-finite value")
        for c in node.children:
            if c not in nodes:
                raise StructureError(f"node {node_id!r} lists unknown child {c!r}")
            if c in parent_of:
                raise StructureError(f"node {c!r} has more than one parent")
            parent_of[c] = node_id
    if tree.root in parent_of:
        raise StructureError("the root has a parent (cycle through the root)")
    # everything must hang off the root; leftovers are orphans or sit on a cycle
    seen = set()
    stack = [tree.root]
    while stack:
        n = stack.pop()
        seen.add(n)
        stack.extend(nodes[n].children)
    missing = set(nodes) - seen
    if missing:
        raise StructureError(f"nodes not reachable from the root (orphan or cycle): {sorted(missing)}")


def evaluate(tree):
    """Scalar reward of the tree (iterative post-order, so depth is not bounded by recursion)."""
    nodes = tree.nodes
    result = {}
    stack = [(tree.root, False)]
    while stack:
        n, expanded = stack.pop()
        node = nodes[n]
        if expanded:
            result[n] = node.value * (1.0 + sum(result[c] for c in node.children))
        else:
            stack.append((n, True))
            stack.extend((c, False) for c in node.children)
    return result[tree.root]


def leaf_traces(tree):
    """Root-to-leaf value arrays, one per leaf, leaves in depth-first child order."""
    nodes = tree.nodes
    traces = []
    stack = [(tree.root, [nodes[tree.root].value])]
    while stack:
        n, path = stack.pop()
        children = nodes[n].children
        if not children:
            traces.append(path)
            continue
        for c in reversed(children):
            stack.append((c, path + [nodes[c].value]))
    return traces


def parse_tree(text):
    """Parse the ``node_id parent_id value`` format; errors carry 1-based line numbers."""
    edges = []
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise StructureError(f"expected 'node_id parent_id value', got {raw.strip()!r}", lineno)
        node_id, parent, value = parts
        try:
            value = float(value)
        except ValueError:
            raise StructureError(f"value {value!r} is not a number", lineno) from None
        if not math.isfinite(value):
            raise StructureError(f"value {value!r} is not finite", lineno)
        if node_id in lines:
            raise StructureError(f"node {node_id!r} already defined on line {lines[node_id]}", lineno)
        if parent == node_id:
            raise StructureError(f"node {node_id!r} is its own parent", lineno)
        lines[node_id] = lineno
        edges.append((node_id, None if parent == ROOT_PARENT else parent, value))

    roots = [e for e in edges if e[1] is None]
    if not roots:
        raise StructureError("no root line (parent '-')")
    if len(roots) > 1:
        raise StructureError(f"second root {roots[1][0]!r}", lines[roots[1][0]])
    for node_id, parent, _ in edges:
        if parent is not None and parent not in lines:
            raise StructureError(f"node {node_id!r} names unknown parent {parent!r}", lines[node_id])
    try:
        return RewardTree.from_edges(edges)
    except StructureError as exc:
        # only cycles can remain at this point; point at the first node on one
        tree_nodes = _unreachable(edges)
        line = min(lines[n] for n in tree_nodes) if tree_nodes else None
        raise StructureError(str(exc), line) from None


def _unreachable(edges):
    children = {}
    root = None
    for node_id, parent, _ in edges:
        if parent is None:
            root = node_id
        else:
            children.setdefault(parent, []).append(node_id)
    seen, stack = set(), [root]
    while stack:
        n = stack.pop()
        seen.add(n)
        stack.extend(children.get(n, []))
    return [e[0] for e in edges if e[0] not in seen]


def format_tree(tree):
    """Inverse of ``parse_tree`` (parents listed before children)."""
    lines = []
    stack = [(tree.root, ROOT_PARENT)]
    while stack:
        n, parent = stack.pop()
        lines.append(f"{n} {parent} {tree.nodes[n].value!r}")
        stack.extend((c, n) for c in reversed(tree.nodes[n].children))
    return "\n".join(lines) + "\n"
