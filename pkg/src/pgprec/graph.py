"""Bipartite user-item interaction graph and edge-dropout views."""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .errors import ConfigError, GraphError


class InteractionGraph:
    """Immutable bipartite graph over dense user ids ``0..n_users-1`` and item ids ``0..n_items-1``.

    Edges are stored in (user, item) lexicographic order.
    """

    def __init__(self, edges, n_users, n_items):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if n_users < 0 or n_items < 0:
            raise GraphError("node counts must be non-negative")
        if len(edges):
            if edges[:, 0].min() < 0 or edges[:, 0].max() >= n_users:
                raise GraphError("user id out of range")
            if edges[:, 1].min() < 0 or edges[:, 1].max() >= n_items:
                raise GraphError("item id out of range")
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
        if len(edges) > 1 and np.any(np.all(edges[1:] == edges[:-1], axis=1)):
            raise GraphError("duplicate edge; deduplicate interactions upstream")
        edges.setflags(write=False)
        self.edges = edges
        self.n_users = int(n_users)
        self.n_items = int(n_items)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def graph(self):
        return self

    @property
    def edge_mask(self):
        return np.ones(self.n_edges, dtype=bool)

    @cached_property
    def user_degrees(self):
        return np.bincount(self.edges[:, 0], minlength=self.n_users)

    @cached_property
    def item_degrees(self):
        return np.bincount(self.edges[:, 1], minlength=self.n_items)

    @cached_property
    def _user_ptr(self):
        return np.concatenate([[0], np.cumsum(self.user_degrees)])

    @cached_property
    def _by_item(self):
        order = np.lexsort((self.edges[:, 0], self.edges[:, 1]))
        ptr = np.concatenate([[0], np.cumsum(self.item_degrees)])
        return self.edges[order, 0], ptr

    def user_neighbors(self, user):
        _check_id(user, self.n_users, "user")
        lo, hi = self._user_ptr[user], self._user_ptr[user + 1]
        return self.edges[lo:hi, 1].tolist()

    def item_neighbors(self, item):
        _check_id(item, self.n_items, "item")
        users, ptr = self._by_item
        return users[ptr[item]:ptr[item + 1]].tolist()

    def adjacency(self):
        """Dense (n_users, n_items) boolean adjacency."""
        return _dense(self.edges, self.n_users, self.n_items)

    def user_item_sets(self):
        out = [set() for _ in range(self.n_users)]
        for u, i in self.edges:
            out[u].add(int(i))
        return out


class SubGraph:
    """A parent graph with a per-edge keep mask (same node set)."""

    def __init__(self, parent: InteractionGraph, edge_mask):
        edge_mask = np.asarray(edge_mask, dtype=bool)
        if edge_mask.shape != (parent.n_edges,):
            raise GraphError("edge mask length must equal the parent edge count")
        edge_mask.setflags(write=False)
        self.parent = parent
        self.edge_mask = edge_mask

    n_users = property(lambda self: self.parent.n_users)
    n_items = property(lambda self: self.parent.n_items)

    @property
    def graph(self):
        return self.parent

    @cached_property
    def edges(self):
        return self.parent.edges[self.edge_mask]

    @property
    def n_edges(self):
        return int(self.edge_mask.sum())

    @cached_property
    def user_degrees(self):
        return np.bincount(self.edges[:, 0], minlength=self.n_users)

    @cached_property
    def item_degrees(self):
        return np.bincount(self.edges[:, 1], minlength=self.n_items)

    def user_neighbors(self, user):
        _check_id(user, self.n_users, "user")
        return self.edges[self.edges[:, 0] == user, 1].tolist()

    def item_neighbors(self, item):
        _check_id(item, self.n_items, "item")
        return sorted(self.edges[self.edges[:, 1] == item, 0].tolist())

    def adjacency(self):
        return _dense(self.edges, self.n_users, self.n_items)


def _check_id(node, n, kind):
    if not 0 <= node < n:
        raise IndexError(f"{kind} id {node} out of range [0, {n})")


def _dense(edges, n_users, n_items):
    adj = np.zeros((n_users, n_items), dtype=bool)
    adj[edges[:, 0], edges[:, 1]] = True
    return adj


def build_graph(pairs, n_users, n_items) -> InteractionGraph:
    return InteractionGraph(pairs, n_users, n_items)


def edge_dropout(g, rho, seed) -> SubGraph:
    """Drop each edge independently with probability ``rho``."""
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1], got {rho}")
    g = g.graph
    keep = np.random.default_rng(seed).random(g.n_edges) >= rho
    return SubGraph(g, keep)


def neighbors(g, node, side="user"):
    """Sorted neighbour ids of a user (``side="user"``) or item (``side="item"``)."""
    if side == "user":
        return g.user_neighbors(node)
    if side == "item":
        return g.item_neighbors(node)
    raise ValueError(f"side must be 'user' or 'item', got {side!r}")
