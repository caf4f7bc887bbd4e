"""Key state memory tree.

The tree records the order in which key states were first achieved in
each episode.  Node degrees set how often exploration switches to the
high-randomness policy, children of the matched branch are the planned
subgoals for unfinished trajectories, and branches that never appear in
a successful episode are pruned away.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

ROOT = "root"


class KsmtError(Exception):
    pass


class SymbolNotInTree(KsmtError, KeyError):
    pass


class NoCandidate(KsmtError):
    """Every symbol in the tree is already part of the chain."""


class _Rng(Protocol):
    def random(self) -> float: ...


def _pick(rng: _Rng, items: Sequence[str]) -> str:
    k = int(rng.random() * len(items))
    return items[min(k, len(items) - 1)]


class KeyStateChain(list):
    """Ordered ``(timestep, symbol)`` first achievements within one episode."""

    @property
    def symbols(self) -> list[str]:
        return [sym for _, sym in self]

    def check(self) -> None:
        seen = set()
        last = -1
        for t, sym in self:
            if t < last:
                raise ValueError(f"chain timesteps must not decrease: {list(self)}")
            if sym in seen:
                raise ValueError(f"symbol {sym!r} appears twice in chain")
            seen.add(sym)
            last = t


@dataclass
class Node:
    symbol: str
    children: list["Node"] = field(default_factory=list)

    @property
    def degree(self) -> int:
        return len(self.children)

    def child(self, symbol: str) -> "Node | None":
        for c in self.children:
            if c.symbol == symbol:
                return c
        return None

    def walk(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def to_dict(self) -> dict:
        return {"symbol": self.symbol, "children": [c.to_dict() for c in self.children]}

    @classmethod
    def from_dict(cls, data: dict) -> "Node":
        return cls(data["symbol"], [cls.from_dict(c) for c in data.get("children", [])])


class Ksmt:
    def __init__(self, one_branch: bool = False):
        self.root = Node(ROOT)
        self.one_branch = one_branch
        self.blacklist: set[str] = set()
        self.success_seen = False
        # one-branch bookkeeping: symbol -> [rank sum, count, first-seen order]
        self._rank: dict[str, list[int]] = {}

    # -- queries ---------------------------------------------------------
    def find(self, symbols: Iterable[str]) -> Node | None:
        node = self.root
        for sym in symbols:
            node = node.child(sym)
            if node is None:
                return None
        return node

    def contains_path(self, symbols: Iterable[str]) -> bool:
        return self.find(symbols) is not None

    @property
    def symbols(self) -> set[str]:
        return {n.symbol for n in self.root.walk() if n is not self.root}

    def __len__(self) -> int:
        return sum(1 for _ in self.root.walk()) - 1

    def node_for(self, symbol: str, context: Sequence[str] | None = None) -> Node:
        """Deepest node labelled ``symbol``; prefers the node on the ``context`` path."""
        if context is not None:
            node = self.find(context)
            if node is not None and node.symbol == symbol:
                return node
        best, best_depth = None, -1
        stack = [(self.root, 0)]
        while stack:
            node, depth = stack.pop()
            if node.symbol == symbol and depth > best_depth:
                best, best_depth = node, depth
            stack.extend((c, depth + 1) for c in node.children)
        if best is None or best is self.root:
            raise SymbolNotInTree(symbol)
        return best

    def branch(self) -> list[str]:
        """Symbols along the first root path (the whole tree in one-branch mode)."""
        out, node = [], self.root
        while node.children:
            node = node.children[0]
            out.append(node.symbol)
        return out

    # -- updates ---------------------------------------------------------
    def insert(self, chain: Iterable) -> "Ksmt":
        symbols = [_symbol_of(item) for item in chain]
        if self.one_branch:
            self._insert_ranked(symbols)
            return self
        node = self.root
        for sym in symbols:
            nxt = node.child(sym)
            if nxt is None:
                nxt = Node(sym)
                node.children.append(nxt)
            node = nxt
        return self

    def _insert_ranked(self, symbols: list[str]) -> None:
        for rank, sym in enumerate(symbols):
            stats = self._rank.get(sym)
            if stats is None:
                self._rank[sym] = [rank, 1, len(self._rank)]
            else:
                stats[0] += rank
                stats[1] += 1
        self._rebuild_branch()

    def _rebuild_branch(self) -> None:
        order = sorted(self._rank, key=lambda s: (self._rank[s][0] / self._rank[s][1], self._rank[s][2]))
        self.root = Node(ROOT)
        node = self.root
        for sym in order:
            nxt = Node(sym)
            node.children.append(nxt)
            node = nxt

    def prune(self, success_chains: Sequence[Iterable]) -> "Ksmt":
        keep: set[str] = set()
        for chain in success_chains:
            keep.update(_symbol_of(item) for item in chain)
        removed: set[str] = set()

        def _filter(node: Node) -> None:
            kept = []
            for c in node.children:
                if c.symbol in keep:
                    _filter(c)
                    kept.append(c)
                else:
                    removed.update(n.symbol for n in c.walk())
            node.children = kept

        if self.one_branch:
            removed = {s for s in self._rank if s not in keep}
            for s in removed:
                del self._rank[s]
            self._rebuild_branch()
        else:
            _filter(self.root)
        self.blacklist.update(removed - keep)
        self.success_seen = True
        return self

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        data = {
            "nodes": self.root.to_dict(),
            "blacklist": sorted(self.blacklist),
            "one_branch": self.one_branch,
            "success_seen": self.success_seen,
        }
        if self.one_branch:
            data["priority"] = {s: list(v) for s, v in self._rank.items()}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Ksmt":
        tree = cls(one_branch=bool(data.get("one_branch", False)))
        tree.root = Node.from_dict(data["nodes"])
        tree.blacklist = set(data.get("blacklist", []))
        tree.success_seen = bool(data.get("success_seen", False))
        tree._rank = {s: list(v) for s, v in data.get("priority", {}).items()}
        return tree

    def __eq__(self, other) -> bool:
        if not isinstance(other, Ksmt):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"Ksmt({self.root.to_dict()!r}, blacklist={sorted(self.blacklist)})"


def _symbol_of(item) -> str:
    return item if isinstance(item, str) else item[1]


def insert_chain(tree: Ksmt, chain: Iterable) -> Ksmt:
    return tree.insert(chain)


def branch_probability(tree: Ksmt, symbol: str, context: Sequence[str] | None = None) -> float:
    """Probability ``1 / (degree + 1)`` of switching to high randomness at ``symbol``."""
    return 1.0 / (tree.node_for(symbol, context).degree + 1)


def epsilon_after_key_state(
    tree: Ksmt, chain_so_far: Iterable, eps_l: float, eps_h: float, rng: _Rng
) -> float:
    node = tree.find(_symbol_of(item) for item in chain_so_far)
    if node is None or not node.children:
        return eps_h
    return eps_h if rng.random() < 1.0 / (node.degree + 1) else eps_l


def plan_subgoal(tree: Ksmt, chain: Iterable, rng: _Rng) -> str:
    symbols = [_symbol_of(item) for item in chain]
    node = tree.find(symbols)
    if node is not None:
        children = [c.symbol for c in node.children if c.symbol not in tree.blacklist]
        if children:
            return _pick(rng, children)
    done = set(symbols)
    candidates = [
        n.symbol for n in tree.root.walk()
        if n is not tree.root and n.symbol not in done and n.symbol not in tree.blacklist
    ]
    # a symbol may label several nodes; sample over distinct symbols
    candidates = list(dict.fromkeys(candidates))
    if not candidates:
        raise NoCandidate("every tree symbol is already in the chain")
    return _pick(rng, candidates)


def prune_on_success(tree: Ksmt, success_chains: Sequence[Iterable]) -> Ksmt:
    if not success_chains:
        raise ValueError("prune_on_success needs at least one success chain")
    return tree.prune(success_chains)


@dataclass
class KeyStateRegistry:
    """Exemplar subspace values recorded at each symbol's first achievement."""

    indices: dict[str, tuple[int, ...]] = field(default_factory=dict)
    exemplars: dict[str, tuple] = field(default_factory=dict)

    def record(self, symbol: str, indices: Sequence[int], state: Sequence) -> bool:
        if symbol in self.exemplars:
            return False
        idx = tuple(indices)
        self.indices[symbol] = idx
        self.exemplars[symbol] = tuple(state[i] for i in idx)
        return True

    def goal(self, symbol: str) -> tuple[tuple[int, ...], tuple]:
        return self.indices[symbol], self.exemplars[symbol]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.exemplars

    def to_dict(self) -> dict:
        return {
            s: {"subspace": list(self.indices[s]), "exemplar": list(self.exemplars[s])}
            for s in self.exemplars
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KeyStateRegistry":
        reg = cls()
        for s, v in data.items():
            reg.indices[s] = tuple(v["subspace"])
            reg.exemplars[s] = tuple(v["exemplar"])
        return reg
