"""Up-correction groups and the correction tree.

Pure functions; everything here is derived from (n, f) and a process id.
Process 0 is always the reduce root; callers that want a different root
renumber via swap_with_zero().
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CorrectionGroup:
    """One up-correction group: ascending member ids, including the root
    when the last group is smaller than f+1."""
    index: int
    members: tuple[int, ...]

    def __contains__(self, pid: int) -> bool:
        return pid in self.members

    def partners_of(self, pid: int) -> tuple[int, ...]:
        if pid not in self.members:
            raise ValueError(f"process {pid} not in group {self.index}")
        return tuple(m for m in self.members if m != pid)


@dataclass(frozen=True)
class IfTree:
    """Correction tree: the root has min(f+1, n-1) children and subtree
    membership of p >= 1 is fixed by (p-1) mod (f+1)."""
    n: int
    f: int
    parent_of: dict[int, int | None]
    children_of: dict[int, tuple[int, ...]]

    def parent(self, pid: int) -> int | None:
        return self.parent_of[pid]

    def children(self, pid: int) -> tuple[int, ...]:
        return self.children_of.get(pid, ())


def correction_group(p: int, n: int, f: int) -> CorrectionGroup | None:
    """Group containing p, or None for the root when (n-1) divides evenly.

    Groups of size 1 (f = 0) are reported as singletons for uniformity.
    """
    if n < 1 or f < 0:
        raise ValueError(f"invalid n={n}, f={f}")
    if not 0 <= p < n:
        raise ValueError(f"process {p} out of range for n={n}")
    width = f + 1
    full = (n - 1) // width
    rem = (n - 1) % width
    if p == 0:
        if rem == 0:
            return None
        return CorrectionGroup(full, (0,) + tuple(range(full * width + 1, n)))
    idx = (p - 1) // width
    if idx == full:
        # partial last group; the root joins it
        return CorrectionGroup(full, (0,) + tuple(range(full * width + 1, n)))
    start = idx * width + 1
    return CorrectionGroup(idx, tuple(range(start, start + width)))


def correction_groups(n: int, f: int) -> list[CorrectionGroup]:
    """All distinct groups, by ascending index."""
    seen: dict[int, CorrectionGroup] = {}
    for p in range(1, n):
        g = correction_group(p, n, f)
        assert g is not None
        seen.setdefault(g.index, g)
    return [seen[i] for i in sorted(seen)]


def subtree_index(p: int, f: int) -> int:
    """1-based subtree number of p; the subtree root is process k itself."""
    if p < 1:
        raise ValueError("root is in no subtree")
    return (p - 1) % (f + 1) + 1


def group_partner_in_subtree(l: int, k: int, f: int, n: int | None = None) -> int:
    """Id of the member of l's group that lies in subtree k (may be l)."""
    if l < 1:
        raise ValueError("root has no cross-subtree partner")
    if not 1 <= k <= f + 1:
        raise ValueError(f"subtree number {k} out of range for f={f}")
    if n is not None and (l - 1) // (f + 1) >= (n - 1) // (f + 1):
        raise ValueError(f"process {l} is grouped with the root")
    return (l - 1) // (f + 1) * (f + 1) + k


def build_if_tree(n: int, f: int) -> IfTree:
    """Tree over 0..n-1; within each residue-class subtree the members are
    connected as a binomial tree over their ascending-order rank."""
    if n < 1 or f < 0:
        raise ValueError(f"invalid n={n}, f={f}")
    width = f + 1
    parent: dict[int, int | None] = {0: None}
    children: dict[int, list[int]] = {p: [] for p in range(n)}
    for k in range(1, min(width, n - 1) + 1):
        members = [p for p in range(1, n) if (p - 1) % width == k - 1]
        for rank, p in enumerate(members):
            par = 0 if rank == 0 else members[rank & (rank - 1)]
            parent[p] = par
            children[par].append(p)
    return IfTree(n, f, parent, {p: tuple(sorted(c)) for p, c in children.items()})


def swap_with_zero(p: int, root: int) -> int:
    """Involution exchanging `root` and 0; identity elsewhere."""
    if p == root:
        return 0
    if p == 0:
        return root
    return p
