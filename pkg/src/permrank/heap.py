"""Array-backed min-max heap (Atkinson et al., 1986) and a bounded top-k keeper.

Even levels of the implicit tree hold minima of their subtrees, odd levels
hold maxima, so both extremes are available in O(1) and removable in
O(log n).
"""

from __future__ import annotations

from typing import Any, Iterable, List


def _is_min_level(i: int) -> bool:
    return ((i + 1).bit_length() - 1) % 2 == 0


class MinMaxHeap:
    def __init__(self, items: Iterable[Any] = ()):
        self.a: List[Any] = []
        for x in items:
            self.push(x)

    def __len__(self):
        return len(self.a)

    def __bool__(self):
        return bool(self.a)

    def push(self, x) -> None:
        self.a.append(x)
        self._bubble_up(len(self.a) - 1)

    def peekmin(self):
        if not self.a:
            raise IndexError("peek from empty heap")
        return self.a[0]

    def peekmax(self):
        return self.a[self._max_index()]

    def popmin(self):
        if not self.a:
            raise IndexError("pop from empty heap")
        return self._remove(0)

    def popmax(self):
        return self._remove(self._max_index())

    def replacemin(self, x):
        """Pop the minimum and push ``x`` in one pass."""
        if not self.a:
            raise IndexError("replace on empty heap")
        out = self.a[0]
        self.a[0] = x
        self._trickle_down(0)
        return out

    def _max_index(self) -> int:
        n = len(self.a)
        if n == 0:
            raise IndexError("peek from empty heap")
        if n == 1:
            return 0
        if n == 2:
            return 1
        return 1 if self.a[1] >= self.a[2] else 2

    def _remove(self, i: int):
        a = self.a
        out = a[i]
        last = a.pop()
        if i < len(a):
            a[i] = last
            self._trickle_down(i)
            # a replacement in the max half may also need to move up
            self._bubble_up(i)
        return out

    def _bubble_up(self, i: int) -> None:
        a = self.a
        if i == 0:
            return
        parent = (i - 1) // 2
        if _is_min_level(i):
            if a[i] > a[parent]:
                a[i], a[parent] = a[parent], a[i]
                self._bubble_up_dir(parent, True)
            else:
                self._bubble_up_dir(i, False)
        else:
            if a[i] < a[parent]:
                a[i], a[parent] = a[parent], a[i]
                self._bubble_up_dir(parent, False)
            else:
                self._bubble_up_dir(i, True)

    def _bubble_up_dir(self, i: int, is_max: bool) -> None:
        a = self.a
        while i > 2:
            gp = ((i - 1) // 2 - 1) // 2
            if (a[i] > a[gp]) if is_max else (a[i] < a[gp]):
                a[i], a[gp] = a[gp], a[i]
                i = gp
            else:
                break

    def _trickle_down(self, i: int) -> None:
        a = self.a
        n = len(a)
        is_min = _is_min_level(i)
        while True:
            first_child = 2 * i + 1
            if first_child >= n:
                return
            cands = [c for c in (first_child, first_child + 1) if c < n]
            cands += [g for c in (first_child, first_child + 1)
                      for g in (2 * c + 1, 2 * c + 2) if g < n]
            if is_min:
                m = min(cands, key=lambda j: a[j])
                better = a[m] < a[i]
            else:
                m = max(cands, key=lambda j: a[j])
                better = a[m] > a[i]
            if not better:
                return
            a[i], a[m] = a[m], a[i]
            if m <= first_child + 1:  # direct child: done
                return
            p = (m - 1) // 2
            if (a[m] > a[p]) if is_min else (a[m] < a[p]):
                a[m], a[p] = a[p], a[m]
            i = m


class BoundedTopK:
    """Keep the ``k`` largest keys seen so far."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.heap = MinMaxHeap()

    def __len__(self):
        return len(self.heap)

    def offer(self, key) -> bool:
        h = self.heap
        if len(h) < self.k:
            h.push(key)
            return True
        if key > h.peekmin():
            h.replacemin(key)
            return True
        return False

    def sorted_desc(self) -> list:
        """Kept keys, largest first. The keeper is left intact."""
        return sorted(self.heap.a, reverse=True)
