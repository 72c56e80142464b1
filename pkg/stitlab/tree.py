"""
tree.py - Binary genealogy words over {-,+}, genealogy tuples and their
leaves, plus exhaustive enumeration of the tuple sets for small k
"""

from dataclasses import dataclass
from functools import total_ordering
from typing import Iterator, List, Tuple

from utils import InvalidTuple, NotALeaf, OutOfRange, TooLarge

MINUS = "-"
PLUS = "+"
_BIT = {MINUS: 0, PLUS: 1}

MAX_ENUMERATION_K = 8


@total_ordering
@dataclass(frozen=True)
class TreeWord:
    """A word over {-,+} stored as a bit pattern with an explicit length.

    '-' is bit 0 and '+' is bit 1, most significant symbol first, so the
    total order (shorter first, then lexicographic with - < +) is the
    order of the pair (level, bits).
    """
    bits: int = 0
    level: int = 0

    def __post_init__(self):
        if self.level < 0 or self.bits < 0 or self.bits >= (1 << self.level):
            raise ValueError(f"invalid word bits={self.bits} level={self.level}")

    @classmethod
    def parse(cls, text: str) -> 'TreeWord':
        bits = 0
        for symbol in text:
            if symbol not in _BIT:
                raise ValueError(f"invalid word symbol {symbol!r} in {text!r}")
            bits = (bits << 1) | _BIT[symbol]
        return cls(bits=bits, level=len(text))

    def __str__(self) -> str:
        return "".join(
            PLUS if (self.bits >> (self.level - 1 - i)) & 1 else MINUS
            for i in range(self.level)
        )

    def __repr__(self) -> str:
        return f"TreeWord({str(self)!r})"

    @property
    def sort_key(self) -> Tuple[int, int]:
        return (self.level, self.bits)

    def __lt__(self, other: 'TreeWord') -> bool:
        if not isinstance(other, TreeWord):
            return NotImplemented
        return self.sort_key < other.sort_key

    def child(self, sign: str) -> 'TreeWord':
        return TreeWord(bits=(self.bits << 1) | _BIT[sign], level=self.level + 1)

    @property
    def minus(self) -> 'TreeWord':
        return self.child(MINUS)

    @property
    def plus(self) -> 'TreeWord':
        return self.child(PLUS)

    def successors(self) -> Tuple['TreeWord', 'TreeWord']:
        return (self.minus, self.plus)

    @property
    def parent(self) -> 'TreeWord':
        if self.level == 0:
            raise OutOfRange("the root word has no parent")
        return TreeWord(bits=self.bits >> 1, level=self.level - 1)


ROOT = TreeWord()


@dataclass(frozen=True)
class TreeTuple:
    """An ordered genealogy (r_0, ..., r_2k): r_0 is the root and each pair
    (r_2l-1, r_2l) are the two successors of an earlier entry."""
    entries: Tuple[TreeWord, ...] = (ROOT,)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @classmethod
    def parse(cls, words: List[str]) -> 'TreeTuple':
        return cls(tuple(TreeWord.parse(w) for w in words))

    @property
    def k(self) -> int:
        return (len(self.entries) - 1) // 2

    def to_list(self) -> List[str]:
        return [str(w) for w in self.entries]

    def validate(self) -> None:
        """Raise InvalidTuple unless the tuple is a genealogy of k divisions."""
        entries = self.entries
        if len(entries) % 2 != 1:
            raise InvalidTuple(f"tuple length {len(entries)} is not odd")
        if entries[0] != ROOT:
            raise InvalidTuple("first entry must be the root word")
        if len(set(entries)) != len(entries):
            raise InvalidTuple("entries are not pairwise distinct")
        seen = {ROOT}
        for l in range(1, self.k + 1):
            first, second = entries[2 * l - 1], entries[2 * l]
            parent = first.parent if first.level > 0 else None
            if parent not in seen or (first, second) != (parent.minus, parent.plus):
                raise InvalidTuple(
                    f"pair ({first}, {second}) at step {l} is not the successor pair of an earlier entry")
            seen.update((first, second))

    def is_valid(self) -> bool:
        try:
            self.validate()
        except InvalidTuple:
            return False
        return True


def leaves(r: TreeTuple) -> List[TreeWord]:
    """Entries with no successor in the tuple, in word order; k+1 of them."""
    r.validate()
    present = set(r.entries)
    return sorted(w for w in r.entries if w.minus not in present and w.plus not in present)


def prefix(r: TreeTuple, s: int) -> TreeTuple:
    if s < 0 or s > r.k:
        raise OutOfRange(f"prefix length {s} outside 0..{r.k}")
    return TreeTuple(r.entries[:2 * s + 1])


def extend(r: TreeTuple, leaf: TreeWord) -> TreeTuple:
    """Divide `leaf`: append its successor pair."""
    if leaf not in leaves(r):
        raise NotALeaf(f"{str(leaf) or 'o'} is not a leaf of {r.to_list()}")
    return TreeTuple(r.entries + (leaf.minus, leaf.plus))


def _enumerate(r: TreeTuple, remaining: int) -> Iterator[TreeTuple]:
    if remaining == 0:
        yield r
        return
    for leaf in leaves(r):
        yield from _enumerate(TreeTuple(r.entries + (leaf.minus, leaf.plus)), remaining - 1)


def enumerate_theta(k: int) -> List[TreeTuple]:
    """All genealogy tuples of k divisions, k! of them, in leaf-choice order."""
    if k < 0:
        raise OutOfRange(f"k must be non-negative, got {k}")
    if k > MAX_ENUMERATION_K:
        raise TooLarge(f"enumeration limited to k <= {MAX_ENUMERATION_K}, got {k}")
    return list(_enumerate(TreeTuple(), k))


def count_theta(k: int) -> int:
    """Count genealogies by choosing one of the current leaves at every step."""
    if k < 0:
        raise OutOfRange(f"k must be non-negative, got {k}")

    def count(n_leaves: int, remaining: int) -> int:
        if remaining == 0:
            return 1
        return n_leaves * count(n_leaves + 1, remaining - 1)

    return count(1, k)
