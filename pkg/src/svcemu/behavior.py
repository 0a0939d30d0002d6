"""Request handlers and the shape-to-handler dispatch dictionary.

A handler is a pure function from (request message, data store) to a handler
result: an ordered response sequence, an optional replacement store, and a
close-channel flag. Purity is the load-bearing property — identical inputs
yield identical results, which makes end-to-end byte streams replayable. The
engine serializes handler invocations per endpoint, so handlers never see a
store mid-update.

Handlers are total over decodable requests: semantically bad requests come
back as LDAP result codes, never engine faults. The store is only replaced on
success.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

from . import ldapcodec
from .datastore import (
    AlreadyExistsError,
    DirectoryStore,
    DistinguishedName,
    Entry,
    InvalidDnError,
    NonLeafError,
    NotFoundError,
    OrphanParentError,
)
from .ldapcodec import (
    AUTH_METHOD_NOT_SUPPORTED,
    ENTRY_ALREADY_EXISTS,
    INVALID_CREDENTIALS,
    NOT_ALLOWED_ON_NON_LEAF,
    NO_SUCH_OBJECT,
    SUCCESS,
    UNWILLING_TO_PERFORM,
    UnsupportedFilterError,
    filter_from_value,
    match_filter,
    result_message,
)
from .message import Assoc, Base, Enumerated, Message, Seq, lookup_assoc


@dataclass(frozen=True)
class HandlerResult:
    responses: tuple[Message, ...] = ()
    updated_store: Optional[DirectoryStore] = None
    close_channel: bool = False


Handler = Callable[[Message, DirectoryStore], HandlerResult]


class NoHandlerError(Exception):
    def __init__(self, shape: str):
        super().__init__(f"no handler bound for shape {shape!r}")
        self.shape = shape


@dataclass(frozen=True)
class DispatchDictionary:
    """Shape-to-handler bindings. Several shapes may share one handler."""

    bindings: Mapping[str, Handler]

    def __init__(self, bindings: Mapping[str, Handler]):
        object.__setattr__(self, "bindings", dict(bindings))

    def shapes(self) -> frozenset[str]:
        return frozenset(self.bindings)


def handle_request(
    dispatch: DispatchDictionary, msg: Message, store: DirectoryStore
) -> HandlerResult:
    """Route a request to its bound handler.

    Every response carries the request's correlation id (enforced here: a
    handler returning a mismatched id is a modeling bug worth failing loudly
    on). Raises NoHandlerError when the shape has no binding.
    """
    handler = dispatch.bindings.get(msg.shape)
    if handler is None:
        raise NoHandlerError(msg.shape)
    result = handler(msg, store)
    for response in result.responses:
        if response.correlation_id != msg.correlation_id:
            raise AssertionError(
                f"handler for {msg.shape} returned correlation id "
                f"{response.correlation_id}, request had {msg.correlation_id}"
            )
    return result


@dataclass(frozen=True)
class EndpointCredentials:
    """Bind policy for one endpoint: one configured admin identity, plus
    anonymous binds (empty name and password) when allowed."""

    admin_dn: str = "cn=admin,o=acme"
    admin_password: bytes = b"secret"
    allow_anonymous: bool = True


def build_ldap_dispatch(credentials: EndpointCredentials) -> DispatchDictionary:
    """The directory-server behavior: bind/unbind, search, add, modify,
    delete, each bound to its request shape."""

    def bind(msg: Message, store: DirectoryStore) -> HandlerResult:
        return ldap_bind(msg, store, credentials)

    return DispatchDictionary(
        {
            "BindRq": bind,
            "UnbindRq": ldap_unbind,
            "SearchRq": ldap_search,
            "AddRq": ldap_add,
            "ModRq": ldap_modify,
            "DelRq": ldap_delete,
        }
    )


# --- handlers ------------------------------------------------------------


def _result(msg: Message, shape: str, code: int, diagnostic: str = "") -> HandlerResult:
    return HandlerResult(
        (result_message(shape, msg.correlation_id, code, diagnostic=diagnostic.encode()),)
    )


def _bytes_value(msg: Message, label: str) -> bytes:
    value = lookup_assoc(msg, label)
    if isinstance(value, Base) and isinstance(value.scalar, bytes):
        return value.scalar
    return b""


def ldap_bind(
    msg: Message, store: DirectoryStore, credentials: EndpointCredentials
) -> HandlerResult:
    auth = lookup_assoc(msg, "authentication")
    if not (isinstance(auth, Assoc) and auth.label == "simple"):
        return _result(msg, "BindRes", AUTH_METHOD_NOT_SUPPORTED,
                       "only simple authentication is supported")
    password = auth.inner.scalar if isinstance(auth.inner, Base) else b""
    assert isinstance(password, bytes)
    name = _bytes_value(msg, "name")
    if not name and not password:
        if credentials.allow_anonymous:
            return _result(msg, "BindRes", SUCCESS)
        return _result(msg, "BindRes", INVALID_CREDENTIALS)
    try:
        bound_dn = DistinguishedName.parse(name)
        admin_dn = DistinguishedName.parse(credentials.admin_dn)
    except InvalidDnError:
        return _result(msg, "BindRes", INVALID_CREDENTIALS)
    if bound_dn == admin_dn and password == credentials.admin_password:
        return _result(msg, "BindRes", SUCCESS)
    return _result(msg, "BindRes", INVALID_CREDENTIALS)


def ldap_unbind(msg: Message, store: DirectoryStore) -> HandlerResult:
    return HandlerResult(responses=(), close_channel=True)


def _requested_attributes(msg: Message) -> Optional[list[str]]:
    """None means all attributes; an empty list means none ("1.1")."""
    selection = lookup_assoc(msg, "attributes")
    if not isinstance(selection, Seq) or not selection.items:
        return None
    names = []
    for item in selection.items:
        if isinstance(item, Base) and isinstance(item.scalar, bytes):
            names.append(item.scalar.decode("utf-8", "replace"))
    if any(n == "*" for n in names):
        return None
    return [n for n in names if n != "1.1"]


def _entry_to_message(entry: Entry, correlation_id: int, selection: Optional[list[str]]) -> Message:
    wanted = None if selection is None else {n.lower() for n in selection}
    attrs = []
    for name, values in entry.attributes.items():
        if wanted is not None and name.lower() not in wanted:
            continue
        attrs.append(Assoc(name, Seq(tuple(Base(v) for v in values))))
    return Message(
        "SearchEntry",
        (
            Assoc("objectName", Base(entry.dn.canonical().encode())),
            Assoc("attributes", Seq(tuple(attrs))),
        ),
        correlation_id=correlation_id,
    )


def ldap_search(msg: Message, store: DirectoryStore) -> HandlerResult:
    scope_value = lookup_assoc(msg, "scope")
    scope = (
        scope_value.scalar.code
        if isinstance(scope_value, Base) and isinstance(scope_value.scalar, Enumerated)
        else -1
    )
    if scope not in ldapcodec.SearchScope.ALL:
        return _result(msg, "SearchDone", UNWILLING_TO_PERFORM, f"unknown scope {scope}")
    filter_value = lookup_assoc(msg, "filter")
    if filter_value is None:
        return _result(msg, "SearchDone", UNWILLING_TO_PERFORM, "missing filter")
    try:
        flt = filter_from_value(filter_value)
    except UnsupportedFilterError as exc:
        return _result(msg, "SearchDone", UNWILLING_TO_PERFORM, str(exc))
    try:
        base = DistinguishedName.parse(_bytes_value(msg, "baseObject"))
    except InvalidDnError:
        return _result(msg, "SearchDone", NO_SUCH_OBJECT, "base object not found")
    in_scope = store.in_scope(base, scope)
    if in_scope is None:
        return _result(msg, "SearchDone", NO_SUCH_OBJECT, "base object not found")
    selection = _requested_attributes(msg)
    responses = [
        _entry_to_message(entry, msg.correlation_id, selection)
        for entry in in_scope
        if match_filter(flt, entry.attributes)
    ]
    responses.append(result_message("SearchDone", msg.correlation_id, SUCCESS))
    return HandlerResult(tuple(responses))


def _attrs_from_value(msg: Message) -> dict[str, tuple[bytes, ...]]:
    attrs: dict[str, tuple[bytes, ...]] = {}
    value = lookup_assoc(msg, "attributes")
    if isinstance(value, Seq):
        for item in value.items:
            if not (isinstance(item, Assoc) and isinstance(item.inner, Seq)):
                continue
            vals = tuple(
                v.scalar
                for v in item.inner.items
                if isinstance(v, Base) and isinstance(v.scalar, bytes)
            )
            if not vals:
                continue
            existing_key = next(
                (k for k in attrs if k.lower() == item.label.lower()), None
            )
            if existing_key is None:
                attrs[item.label] = vals
            else:
                attrs[existing_key] = attrs[existing_key] + vals
    return attrs


def ldap_add(msg: Message, store: DirectoryStore) -> HandlerResult:
    try:
        dn = DistinguishedName.parse(_bytes_value(msg, "entry"))
    except InvalidDnError:
        return _result(msg, "AddRes", NO_SUCH_OBJECT, "malformed DN")
    attrs = _attrs_from_value(msg)
    # Make sure the RDN attribute is present on the entry itself.
    rdn_attr, rdn_value = dn.rdns[0]
    if not any(k.lower() == rdn_attr for k in attrs):
        attrs[rdn_attr] = (rdn_value.encode(),)
    try:
        updated = store.insert(Entry(dn, attrs))
    except AlreadyExistsError:
        return _result(msg, "AddRes", ENTRY_ALREADY_EXISTS)
    except OrphanParentError:
        return _result(msg, "AddRes", NO_SUCH_OBJECT, "parent not found")
    return HandlerResult(
        (result_message("AddRes", msg.correlation_id, SUCCESS),), updated_store=updated
    )


def ldap_modify(msg: Message, store: DirectoryStore) -> HandlerResult:
    try:
        dn = DistinguishedName.parse(_bytes_value(msg, "entry"))
    except InvalidDnError:
        return _result(msg, "ModRes", NO_SUCH_OBJECT, "malformed DN")
    entry = store.lookup(dn)
    if entry is None:
        return _result(msg, "ModRes", NO_SUCH_OBJECT)
    attrs: dict[str, tuple[bytes, ...]] = dict(entry.attributes)

    def find_key(name: str) -> Optional[str]:
        lowered = name.lower()
        return next((k for k in attrs if k.lower() == lowered), None)

    changes = lookup_assoc(msg, "changes")
    items = changes.items if isinstance(changes, Seq) else ()
    for change in items:
        if not (isinstance(change, Assoc) and isinstance(change.inner, Assoc)):
            continue
        op = change.label
        attr = change.inner.label
        values = (
            tuple(
                v.scalar
                for v in change.inner.inner.items
                if isinstance(v, Base) and isinstance(v.scalar, bytes)
            )
            if isinstance(change.inner.inner, Seq)
            else ()
        )
        key = find_key(attr)
        if op == "replace":
            if key is not None:
                del attrs[key]
            if values:
                attrs[attr] = values
        elif op == "add":
            if key is None:
                if values:
                    attrs[attr] = values
            else:
                merged = attrs[key] + tuple(v for v in values if v not in attrs[key])
                attrs[key] = merged
        elif op == "delete":
            if key is None:
                continue
            if not values:
                del attrs[key]
            else:
                remaining = tuple(v for v in attrs[key] if v not in values)
                if remaining:
                    attrs[key] = remaining
                else:
                    del attrs[key]
    updated = store.replace(entry.with_attributes(attrs))
    return HandlerResult(
        (result_message("ModRes", msg.correlation_id, SUCCESS),), updated_store=updated
    )


def ldap_delete(msg: Message, store: DirectoryStore) -> HandlerResult:
    try:
        dn = DistinguishedName.parse(_bytes_value(msg, "entry"))
    except InvalidDnError:
        return _result(msg, "DelRes", NO_SUCH_OBJECT, "malformed DN")
    try:
        updated = store.remove(dn)
    except NotFoundError:
        return _result(msg, "DelRes", NO_SUCH_OBJECT)
    except NonLeafError:
        return _result(msg, "DelRes", NOT_ALLOWED_ON_NON_LEAF)
    return HandlerResult(
        (result_message("DelRes", msg.correlation_id, SUCCESS),), updated_store=updated
    )
