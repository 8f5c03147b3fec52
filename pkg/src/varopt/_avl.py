"""Height-balanced search tree with subtree counts and weight sums.

Backing structure for the tree reservoir: one instance ordered by
(weight, arrival) holds the items above the threshold, another ordered
by arrival index holds the items pinned at the threshold. Nodes carry
subtree size and subtree weight, so rank selection, minimum extraction,
and mass queries all run in O(log n).

Keys must be unique and mutually comparable. Every mutating function on
nodes returns the new subtree root.
"""

from __future__ import annotations

from typing import Any, Iterator


class _Node:
    __slots__ = ("key", "item_key", "weight", "left", "right", "height", "size", "wsum")

    def __init__(self, key: Any, item_key: Any, weight: float) -> None:
        self.key = key
        self.item_key = item_key
        self.weight = weight
        self.left: _Node | None = None
        self.right: _Node | None = None
        self.height = 1
        self.size = 1
        self.wsum = weight


def _height(node: _Node | None) -> int:
    return node.height if node is not None else 0


def _size(node: _Node | None) -> int:
    return node.size if node is not None else 0


def _wsum(node: _Node | None) -> float:
    return node.wsum if node is not None else 0.0


def _update(node: _Node) -> None:
    node.height = 1 + max(_height(node.left), _height(node.right))
    node.size = 1 + _size(node.left) + _size(node.right)
    node.wsum = node.weight + _wsum(node.left) + _wsum(node.right)


def _rotate_left(node: _Node) -> _Node:
    pivot = node.right
    assert pivot is not None
    node.right = pivot.left
    pivot.left = node
    _update(node)
    _update(pivot)
    return pivot


def _rotate_right(node: _Node) -> _Node:
    pivot = node.left
    assert pivot is not None
    node.left = pivot.right
    pivot.right = node
    _update(node)
    _update(pivot)
    return pivot


def _rebalance(node: _Node) -> _Node:
    _update(node)
    lean = _height(node.left) - _height(node.right)
    if lean > 1:
        left = node.left
        assert left is not None
        if _height(left.left) < _height(left.right):
            node.left = _rotate_left(left)
        return _rotate_right(node)
    if lean < -1:
        right = node.right
        assert right is not None
        if _height(right.right) < _height(right.left):
            node.right = _rotate_right(right)
        return _rotate_left(node)
    return node


def _insert(node: _Node | None, key: Any, item_key: Any, weight: float) -> _Node:
    if node is None:
        return _Node(key, item_key, weight)
    if key < node.key:
        node.left = _insert(node.left, key, item_key, weight)
    elif key > node.key:
        node.right = _insert(node.right, key, item_key, weight)
    else:
        raise ValueError(f"duplicate tree key: {key!r}")
    return _rebalance(node)


def _pop_min(node: _Node) -> tuple[_Node | None, _Node]:
    if node.left is None:
        return node.right, node
    node.left, removed = _pop_min(node.left)
    return _rebalance(node), removed


def _delete_index(node: _Node, index: int) -> tuple[_Node | None, _Node]:
    left_size = _size(node.left)
    if index < left_size:
        assert node.left is not None
        node.left, removed = _delete_index(node.left, index)
        return _rebalance(node), removed
    if index > left_size:
        assert node.right is not None
        node.right, removed = _delete_index(node.right, index - left_size - 1)
        return _rebalance(node), removed
    removed = node
    if node.left is None:
        return node.right, removed
    if node.right is None:
        return node.left, removed
    node.right, successor = _pop_min(node.right)
    successor.left = node.left
    successor.right = node.right
    return _rebalance(successor), removed


def _walk(node: _Node | None) -> Iterator[tuple[Any, Any, float]]:
    if node is None:
        return
    yield from _walk(node.left)
    yield (node.key, node.item_key, node.weight)
    yield from _walk(node.right)


class AvlTree:
    """Ordered map from unique keys to (item_key, weight) payloads."""

    __slots__ = ("_root",)

    def __init__(self) -> None:
        self._root: _Node | None = None

    def __len__(self) -> int:
        return _size(self._root)

    def __bool__(self) -> bool:
        return self._root is not None

    def __iter__(self) -> Iterator[tuple[Any, Any, float]]:
        return _walk(self._root)

    @property
    def weight_sum(self) -> float:
        return _wsum(self._root)

    def insert(self, key: Any, item_key: Any, weight: float) -> None:
        self._root = _insert(self._root, key, item_key, weight)

    def peek_min(self) -> tuple[Any, Any, float] | None:
        node = self._root
        if node is None:
            return None
        while node.left is not None:
            node = node.left
        return (node.key, node.item_key, node.weight)

    def pop_min(self) -> tuple[Any, Any, float]:
        if self._root is None:
            raise IndexError("pop_min from an empty tree")
        self._root, removed = _pop_min(self._root)
        return (removed.key, removed.item_key, removed.weight)

    def select(self, index: int) -> tuple[Any, Any, float]:
        """Return the entry with the given in-order rank (0-based)."""
        node = self._root
        if not 0 <= index < _size(node):
            raise IndexError(f"rank {index} out of range for size {_size(node)}")
        while True:
            assert node is not None
            left_size = _size(node.left)
            if index < left_size:
                node = node.left
            elif index > left_size:
                index -= left_size + 1
                node = node.right
            else:
                return (node.key, node.item_key, node.weight)

    def delete_index(self, index: int) -> tuple[Any, Any, float]:
        """Remove and return the entry with the given in-order rank."""
        if not 0 <= index < _size(self._root):
            raise IndexError(f"rank {index} out of range for size {_size(self._root)}")
        assert self._root is not None
        self._root, removed = _delete_index(self._root, index)
        return (removed.key, removed.item_key, removed.weight)
