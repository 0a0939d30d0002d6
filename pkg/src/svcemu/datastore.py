"""In-memory DN-keyed directory tree with deterministic seeding.

Stores are immutable values: every mutation returns a fresh store that shares
unchanged entries with its predecessor, which keeps handler purity cheap (the
input store is never touched) and lets thousands of seeded endpoints share
identical attribute data. Two invariants hold at all times: the root entry is
present, and every non-root entry's parent exists (tree closure).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

PEOPLE_OU = "people"

# Surnames cycle across seeded users; the workload's subtree search filters on
# the first one, so the cycle length fixes how many entries that step returns.
SURNAMES = (
    "Adams",
    "Baker",
    "Clark",
    "Davis",
    "Evans",
    "Foster",
    "Garcia",
    "Harris",
    "Ito",
    "Jones",
    "Khan",
    "Lopez",
    "Miller",
    "Nguyen",
    "Olsen",
)


class StoreError(Exception):
    pass


class InvalidDnError(StoreError):
    pass


class NotFoundError(StoreError):
    pass


class AlreadyExistsError(StoreError):
    pass


class NonLeafError(StoreError):
    pass


class OrphanParentError(StoreError):
    pass


@dataclass(frozen=True, slots=True)
class DistinguishedName:
    """A DN as an ordered list of (attribute, value) RDNs, leaf first.

    Attributes compare case-insensitively (stored lowercased); values are
    stored trimmed but case-preserved. The canonical string form is the
    comparison key everywhere.
    """

    rdns: tuple[tuple[str, str], ...]

    def __init__(self, rdns: Iterable[tuple[str, str]]):
        canon = tuple((a.strip().lower(), v.strip()) for a, v in rdns)
        for attr, value in canon:
            if not attr or not value:
                raise InvalidDnError(f"empty RDN component in {canon!r}")
        object.__setattr__(self, "rdns", canon)

    @classmethod
    def parse(cls, text: str | bytes) -> "DistinguishedName":
        if isinstance(text, bytes):
            try:
                text = text.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise InvalidDnError(f"DN is not valid UTF-8: {exc}") from None
        parts = _split_unescaped(text, ",")
        rdns = []
        for part in parts:
            if "=" not in part:
                raise InvalidDnError(f"RDN {part!r} has no '='")
            attr, _, value = part.partition("=")
            rdns.append((attr, value.replace("\\,", ",")))
        return cls(rdns)

    def canonical(self) -> str:
        return ",".join(f"{a}={v}" for a, v in self.rdns)

    def parent(self) -> Optional["DistinguishedName"]:
        if len(self.rdns) <= 1:
            return None
        return DistinguishedName(self.rdns[1:])

    def child(self, attr: str, value: str) -> "DistinguishedName":
        return DistinguishedName(((attr, value),) + self.rdns)

    def is_under(self, ancestor: "DistinguishedName") -> bool:
        """True when self is a strict descendant of ancestor."""
        n = len(ancestor.rdns)
        return len(self.rdns) > n and self.rdns[len(self.rdns) - n :] == ancestor.rdns

    def __str__(self) -> str:
        return self.canonical()


def _split_unescaped(text: str, sep: str) -> list[str]:
    parts, current, escaped = [], [], False
    for ch in text:
        if escaped:
            current.append("\\" + ch)
            escaped = False
        elif ch == "\\":
            escaped = True
        elif ch == sep:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if escaped:
        raise InvalidDnError("dangling escape at end of DN")
    parts.append("".join(current))
    return parts


def _dfs_key(dn: DistinguishedName) -> tuple[str, ...]:
    # Root-first RDN tuple: parents are prefixes of their children, so
    # lexicographic order is exactly depth-first DN order.
    return tuple(f"{a}={v}" for a, v in reversed(dn.rdns))


@dataclass(frozen=True, slots=True)
class Entry:
    """One directory entry: a DN plus an attribute map.

    Attribute names keep their display case but must be unique
    case-insensitively; value lists are non-empty tuples of octet strings.
    """

    dn: DistinguishedName
    attributes: Mapping[str, tuple[bytes, ...]]

    def __init__(self, dn: DistinguishedName, attributes: Mapping[str, Iterable[bytes]]):
        attrs: dict[str, tuple[bytes, ...]] = {}
        seen = set()
        for name, values in attributes.items():
            lowered = name.lower()
            if lowered in seen:
                raise StoreError(f"duplicate attribute {name!r} (case-insensitive)")
            seen.add(lowered)
            vals = tuple(values)
            if not vals:
                raise StoreError(f"attribute {name!r} has no values")
            attrs[name] = vals
        object.__setattr__(self, "dn", dn)
        object.__setattr__(self, "attributes", attrs)

    def get(self, name: str) -> tuple[bytes, ...]:
        lowered = name.lower()
        for key, vals in self.attributes.items():
            if key.lower() == lowered:
                return vals
        return ()

    def with_attributes(self, attributes: Mapping[str, Iterable[bytes]]) -> "Entry":
        return Entry(self.dn, attributes)


@dataclass(frozen=True, slots=True)
class DirectoryStore:
    root_dn: DistinguishedName
    entries: Mapping[str, Entry]  # canonical DN -> Entry, root included

    def lookup(self, dn: DistinguishedName) -> Optional[Entry]:
        return self.entries.get(dn.canonical())

    def children(self, dn: DistinguishedName) -> list[Entry]:
        depth = len(dn.rdns) + 1
        return sorted(
            (
                e
                for e in self.entries.values()
                if len(e.dn.rdns) == depth and e.dn.rdns[1:] == dn.rdns
            ),
            key=lambda e: _dfs_key(e.dn),
        )

    def insert(self, entry: Entry) -> "DirectoryStore":
        key = entry.dn.canonical()
        if key in self.entries:
            raise AlreadyExistsError(key)
        parent = entry.dn.parent()
        if parent is None or parent.canonical() not in self.entries:
            raise OrphanParentError(f"parent of {key} not present")
        entries = dict(self.entries)
        entries[key] = entry
        return DirectoryStore(self.root_dn, entries)

    def replace(self, entry: Entry) -> "DirectoryStore":
        key = entry.dn.canonical()
        if key not in self.entries:
            raise NotFoundError(key)
        entries = dict(self.entries)
        entries[key] = entry
        return DirectoryStore(self.root_dn, entries)

    def remove(self, dn: DistinguishedName) -> "DirectoryStore":
        key = dn.canonical()
        if key not in self.entries:
            raise NotFoundError(key)
        if self.children(dn):
            raise NonLeafError(f"{key} has children")
        if key == self.root_dn.canonical():
            raise NonLeafError("cannot remove the root entry")
        entries = dict(self.entries)
        del entries[key]
        return DirectoryStore(self.root_dn, entries)

    def in_scope(self, base: DistinguishedName, scope: int) -> Optional[list[Entry]]:
        """Entries visible from ``base`` under a search scope (0 base-object,
        1 single-level, 2 whole-subtree), in depth-first DN order. Returns
        None when the base itself is absent."""
        base_entry = self.lookup(base)
        if base_entry is None:
            return None
        if scope == 0:
            return [base_entry]
        if scope == 1:
            return self.children(base)
        if scope == 2:
            matches = [
                e
                for e in self.entries.values()
                if e.dn.rdns == base.rdns or e.dn.is_under(base)
            ]
            matches.sort(key=lambda e: _dfs_key(e.dn))
            return matches
        raise ValueError(f"unknown scope {scope}")

    def size(self) -> int:
        return len(self.entries)


def validate_store(store: DirectoryStore) -> None:
    """Check the structural invariants; raises StoreError on violation."""
    root_key = store.root_dn.canonical()
    if root_key not in store.entries:
        raise StoreError("root entry missing")
    for key, entry in store.entries.items():
        if entry.dn.canonical() != key:
            raise StoreError(f"entry keyed {key!r} carries DN {entry.dn}")
        if key == root_key:
            continue
        parent = entry.dn.parent()
        if parent is None or parent.canonical() not in store.entries:
            raise StoreError(f"orphan entry {key!r}")


# --- deterministic seeding ----------------------------------------------------

_OC_ROOT = (b"top", b"organization")
_OC_OU = (b"top", b"organizationalUnit")
_OC_PERSON = (b"top", b"person", b"inetOrgPerson")

# Per-user attribute templates are endpoint-independent, so fleets share them;
# only userPassword varies by endpoint.
_person_template_cache: dict[int, dict[str, tuple[bytes, ...]]] = {}


def _person_template(k: int) -> dict[str, tuple[bytes, ...]]:
    cached = _person_template_cache.get(k)
    if cached is None:
        cached = {
            "uid": (f"u{k}".encode(),),
            "cn": (f"User {k}".encode(),),
            "sn": (SURNAMES[k % len(SURNAMES)].encode(),),
            "objectClass": _OC_PERSON,
        }
        _person_template_cache[k] = cached
    return cached


def person_password(k: int, endpoint_index: int) -> bytes:
    return f"pw-{endpoint_index}-{k}".encode()


def person_attributes(k: int, endpoint_index: int) -> dict[str, tuple[bytes, ...]]:
    """The attribute set of seeded user ``k`` on a given endpoint. The load
    driver reuses this recipe when it adds its scratch user."""
    attrs = dict(_person_template(k))
    attrs["userPassword"] = (person_password(k, endpoint_index),)
    return attrs


# Seeded DNs are identical on every endpoint; share them fleet-wide.
_dn_cache: dict[tuple, DistinguishedName] = {}


def person_dn(base_dn: DistinguishedName, k: int) -> DistinguishedName:
    key = ("person", base_dn.rdns, k)
    dn = _dn_cache.get(key)
    if dn is None:
        dn = people_dn(base_dn).child("uid", f"u{k}")
        _dn_cache[key] = dn
    return dn


def people_dn(base_dn: DistinguishedName) -> DistinguishedName:
    key = ("people", base_dn.rdns)
    dn = _dn_cache.get(key)
    if dn is None:
        dn = base_dn.child("ou", PEOPLE_OU)
        _dn_cache[key] = dn
    return dn


def seed_store(
    base_dn: DistinguishedName, n_users: int, endpoint_index: int = 0
) -> DirectoryStore:
    """Build the standard seeded directory: the root entry, one ou=people
    container, and ``n_users`` person entries uid=u0..u<n-1>. Identical inputs
    produce identical stores; the endpoint index perturbs only attribute
    values (passwords), never structure.
    """
    if n_users < 0:
        raise ValueError("n_users must be >= 0")
    root_attr, root_value = base_dn.rdns[0]
    entries: dict[str, Entry] = {}
    root_entry = Entry(base_dn, {root_attr: (root_value.encode(),), "objectClass": _OC_ROOT})
    entries[sys.intern(base_dn.canonical())] = root_entry
    ou = people_dn(base_dn)
    entries[sys.intern(ou.canonical())] = Entry(
        ou, {"ou": (PEOPLE_OU.encode(),), "objectClass": _OC_OU}
    )
    for k in range(n_users):
        dn = person_dn(base_dn, k)
        entries[sys.intern(dn.canonical())] = Entry(
            dn, person_attributes(k, endpoint_index)
        )
    return DirectoryStore(base_dn, entries)
