"""Engine-internal message representation.

A message is a shape tag (its type name, e.g. ``"BindRq"``) plus an ordered
list of structured values and a correlation id. Codecs translate between this
form and whatever the wire needs; the protocol layer only ever looks at the
shape, and handlers only at the values. Everything here is immutable, so
messages can be shared between concurrent activities freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

# The shapes of the shipped LDAP vocabulary. Other service models may use
# their own closed shape sets; nothing below depends on this one.
LDAP_SHAPES = frozenset(
    {
        "BindRq",
        "BindRes",
        "UnbindRq",
        "SearchRq",
        "SearchEntry",
        "SearchDone",
        "ModRq",
        "ModRes",
        "AddRq",
        "AddRes",
        "DelRq",
        "DelRes",
    }
)


@dataclass(frozen=True, slots=True)
class Enumerated:
    """An enumerated code, kept distinct from plain integers so round-trips
    through tagged encodings preserve the value kind."""

    code: int


Scalar = Union[int, bytes, bool, Enumerated]


@dataclass(frozen=True, eq=False, slots=True)
class Base:
    """Leaf value: integer, octet string, boolean, or enumerated code.

    Equality is kind-sensitive: ``Base(True) != Base(1)`` even though Python
    considers the scalars equal.
    """

    scalar: Scalar

    def __post_init__(self) -> None:
        if not isinstance(self.scalar, (bool, int, bytes, Enumerated)):
            raise TypeError(f"unsupported scalar type: {type(self.scalar).__name__}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Base):
            return NotImplemented
        return type(self.scalar) is type(other.scalar) and self.scalar == other.scalar

    def __hash__(self) -> int:
        return hash((type(self.scalar).__name__, self.scalar))


@dataclass(frozen=True, slots=True)
class Assoc:
    """A labelled value, used to identify values inside sequences."""

    label: str
    inner: "Value"


@dataclass(frozen=True, slots=True)
class Seq:
    """An ordered sequence of values. Equality is deep and order-sensitive."""

    items: tuple["Value", ...]

    def __init__(self, items=()):
        object.__setattr__(self, "items", tuple(items))


Value = Union[Base, Assoc, Seq]


@dataclass(frozen=True, slots=True)
class Message:
    shape: str
    values: tuple[Value, ...] = ()
    correlation_id: int = 0

    def __init__(self, shape: str, values=(), correlation_id: int = 0):
        if not shape:
            raise ValueError("message shape must be non-empty")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", tuple(values))
        object.__setattr__(self, "correlation_id", correlation_id)


def lookup_assoc(msg: Message, label: str) -> Optional[Value]:
    """Return the first top-level Assoc value with the given label, if any.

    Only the top-level value list is searched; nested sequences are not
    descended into. Duplicate labels are legal and the first wins.
    """
    for v in msg.values:
        if isinstance(v, Assoc) and v.label == label:
            return v.inner
    return None


def messages_equal(a: Message, b: Message) -> bool:
    """True iff shapes, correlation ids, and value lists are deep-equal."""
    return a == b
