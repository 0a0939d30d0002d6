"""Bidirectional translation between engine messages and the LDAP wire form.

Covers exactly the twelve-operation vocabulary a directory endpoint speaks:
bind/unbind, search (request, entry, done), modify, add, delete, and their
results. Anything else on the wire decodes to a structured error, never an
exception escape or a crash — arbitrary bytes are safe input.

Output is always minimal definite-length BER; input is accepted liberally
(non-minimal lengths, SET or SEQUENCE for value lists, trailing controls are
ignored). ``frame_stream`` does incremental framing for TCP, tolerating any
chunk boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

from .ber import (
    CLASS_APPLICATION,
    CLASS_CONTEXT,
    CLASS_UNIVERSAL,
    CONSTRUCTED,
    DEFAULT_MAX_FRAME,
    CodecError,
    FrameTooLargeError,
    MalformedBerError,
    MissingValueError,
    Tlv,
    UnknownApplicationTagError,
    UnknownShapeError,
    TAG_BOOLEAN,
    TAG_ENUMERATED,
    TAG_INTEGER,
    TAG_OCTET_STRING,
    TAG_SEQUENCE,
    TAG_SET,
    decode_boolean,
    decode_integer,
    encode_boolean,
    encode_enumerated,
    encode_integer,
    encode_octets,
    encode_sequence,
    encode_tlv,
    iter_children,
    read_header,
    read_tlv,
)
from .message import Assoc, Base, Enumerated, Message, Seq, Value, lookup_assoc

# A wire frame is one complete top-level TLV (an LDAPMessage envelope).
WireFrame = bytes

# protocolOp application tag -> shape.
APPLICATION_SHAPES = {
    0: "BindRq",
    1: "BindRes",
    2: "UnbindRq",
    3: "SearchRq",
    4: "SearchEntry",
    5: "SearchDone",
    6: "ModRq",
    7: "ModRes",
    8: "AddRq",
    9: "AddRes",
    10: "DelRq",
    11: "DelRes",
}
SHAPE_TAGS = {shape: tag for tag, shape in APPLICATION_SHAPES.items()}

# Result codes used by the directory behavior.
SUCCESS = 0
PROTOCOL_ERROR = 2
AUTH_METHOD_NOT_SUPPORTED = 7
NO_SUCH_OBJECT = 32
INVALID_CREDENTIALS = 49
UNWILLING_TO_PERFORM = 53
NOT_ALLOWED_ON_NON_LEAF = 66
ENTRY_ALREADY_EXISTS = 68

_RESULT_SHAPES = frozenset({"BindRes", "SearchDone", "ModRes", "AddRes", "DelRes"})

_MAX_FILTER_DEPTH = 32

_MODIFY_OPS = {0: "add", 1: "delete", 2: "replace"}
_MODIFY_OP_CODES = {name: code for code, name in _MODIFY_OPS.items()}


class SearchScope:
    BASE_OBJECT = 0
    SINGLE_LEVEL = 1
    WHOLE_SUBTREE = 2

    ALL = (BASE_OBJECT, SINGLE_LEVEL, WHOLE_SUBTREE)


# --- search filters ----------------------------------------------------------


class UnsupportedFilterError(Exception):
    """Raised when a decoded filter uses a choice the directory behavior does
    not evaluate (substrings, ordering, approx, extensible)."""

    def __init__(self, choice_tag: int):
        super().__init__(f"unsupported filter choice [{choice_tag}]")
        self.choice_tag = choice_tag


@dataclass(frozen=True)
class Present:
    attr: str


@dataclass(frozen=True)
class Equality:
    attr: str
    value: bytes


@dataclass(frozen=True)
class And:
    parts: tuple["Filter", ...]

    def __init__(self, parts: Iterable["Filter"]):
        parts = tuple(parts)
        if not parts:
            raise ValueError("And filter needs at least one part")
        object.__setattr__(self, "parts", parts)


@dataclass(frozen=True)
class Or:
    parts: tuple["Filter", ...]

    def __init__(self, parts: Iterable["Filter"]):
        parts = tuple(parts)
        if not parts:
            raise ValueError("Or filter needs at least one part")
        object.__setattr__(self, "parts", parts)


@dataclass(frozen=True)
class Not:
    inner: "Filter"


Filter = Union[Present, Equality, And, Or, Not]


def match_filter(flt: Filter, attributes: Mapping[str, Sequence[bytes]]) -> bool:
    """Evaluate a filter against an attribute map. Attribute names compare
    case-insensitively; values compare as exact octet strings."""
    lowered = {name.lower(): vals for name, vals in attributes.items()}
    return _match(flt, lowered)


def _match(flt: Filter, lowered: Mapping[str, Sequence[bytes]]) -> bool:
    if isinstance(flt, Present):
        return flt.attr.lower() in lowered
    if isinstance(flt, Equality):
        return flt.value in lowered.get(flt.attr.lower(), ())
    if isinstance(flt, And):
        return all(_match(p, lowered) for p in flt.parts)
    if isinstance(flt, Or):
        return any(_match(p, lowered) for p in flt.parts)
    assert isinstance(flt, Not)
    return not _match(flt.inner, lowered)


def filter_to_value(flt: Filter) -> Value:
    if isinstance(flt, Present):
        return Assoc("present", Base(flt.attr.encode()))
    if isinstance(flt, Equality):
        return Assoc("equalityMatch", Seq((Base(flt.attr.encode()), Base(flt.value))))
    if isinstance(flt, And):
        return Assoc("and", Seq(tuple(filter_to_value(p) for p in flt.parts)))
    if isinstance(flt, Or):
        return Assoc("or", Seq(tuple(filter_to_value(p) for p in flt.parts)))
    assert isinstance(flt, Not)
    return Assoc("not", filter_to_value(flt.inner))


def filter_from_value(value: Value) -> Filter:
    """Rebuild a Filter from its message-value form; raises
    UnsupportedFilterError for the marked unsupported choices."""
    if not isinstance(value, Assoc):
        raise ValueError("filter value must be an Assoc")
    label, inner = value.label, value.inner
    if label == "present":
        assert isinstance(inner, Base) and isinstance(inner.scalar, bytes)
        return Present(inner.scalar.decode())
    if label == "equalityMatch":
        assert isinstance(inner, Seq) and len(inner.items) == 2
        attr, val = inner.items
        assert isinstance(attr, Base) and isinstance(val, Base)
        assert isinstance(attr.scalar, bytes) and isinstance(val.scalar, bytes)
        return Equality(attr.scalar.decode(), val.scalar)
    if label in ("and", "or"):
        assert isinstance(inner, Seq)
        parts = tuple(filter_from_value(p) for p in inner.items)
        return And(parts) if label == "and" else Or(parts)
    if label == "not":
        return Not(filter_from_value(inner))
    if label == "unsupportedFilter":
        assert isinstance(inner, Base) and isinstance(inner.scalar, int)
        raise UnsupportedFilterError(inner.scalar)
    raise ValueError(f"unknown filter label {label!r}")


# --- decoding ----------------------------------------------------------------


def decode(frame: WireFrame, max_frame: int = DEFAULT_MAX_FRAME) -> Message:
    """Decode one complete wire frame into a Message.

    The shape comes from the protocolOp application tag, the correlation id
    from the envelope's message id. Raises MalformedBerError,
    UnknownApplicationTagError or FrameTooLargeError; every error names the
    byte offset it tripped on.
    """
    if len(frame) > max_frame:
        raise FrameTooLargeError(f"frame of {len(frame)} bytes exceeds {max_frame}", 0)
    envelope, end = read_tlv(frame, 0, max_frame)
    if envelope.tag != TAG_SEQUENCE:
        raise MalformedBerError(
            f"expected SEQUENCE envelope (0x30), got 0x{envelope.tag:02x}", 0
        )
    if end != len(frame):
        raise MalformedBerError("trailing bytes after envelope", end)
    children = iter_children(envelope)
    if len(children) < 2:
        raise MalformedBerError("envelope needs message id and protocol op", 0)
    mid = children[0]
    if mid.tag != TAG_INTEGER:
        raise MalformedBerError("message id must be INTEGER", mid.offset)
    correlation_id = decode_integer(mid)
    op = children[1]
    # children[2:] would be controls; they are tolerated and ignored.
    if op.tag_class != CLASS_APPLICATION:
        raise MalformedBerError(
            f"protocol op must be application-class, got 0x{op.tag:02x}", op.offset
        )
    shape = APPLICATION_SHAPES.get(op.number)
    if shape is None:
        raise UnknownApplicationTagError(
            f"application tag {op.number} is outside the supported vocabulary",
            op.offset,
        )
    values = _OP_DECODERS[shape](op)
    return Message(shape, values, correlation_id=correlation_id)


def _require_children(op: Tlv, count: int, what: str) -> list[Tlv]:
    children = iter_children(op)
    if len(children) < count:
        raise MalformedBerError(
            f"{what} needs at least {count} elements, got {len(children)}", op.offset
        )
    return children


def _octets(tlv: Tlv, what: str) -> bytes:
    if tlv.tag_class != CLASS_UNIVERSAL or tlv.number != TAG_OCTET_STRING:
        raise MalformedBerError(f"{what} must be an OCTET STRING", tlv.offset)
    return tlv.content


def _int_like(tlv: Tlv, what: str) -> int:
    if tlv.tag not in (TAG_INTEGER, TAG_ENUMERATED):
        raise MalformedBerError(f"{what} must be INTEGER or ENUMERATED", tlv.offset)
    return decode_integer(tlv)


def _attr_name(raw: bytes, offset: int) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedBerError("attribute name is not valid UTF-8", offset) from None


def _decode_bind_rq(op: Tlv) -> tuple[Value, ...]:
    children = _require_children(op, 3, "bind request")
    version = _int_like(children[0], "bind version")
    name = _octets(children[1], "bind name")
    auth = children[2]
    if auth.tag_class != CLASS_CONTEXT:
        raise MalformedBerError("authentication must be context-tagged", auth.offset)
    if auth.number == 0:
        auth_value: Value = Assoc("simple", Base(auth.content))
    elif auth.number == 3:
        mechanism = b""
        if auth.constructed and auth.content:
            inner = iter_children(auth)
            if inner:
                mechanism = inner[0].content
        else:
            mechanism = auth.content
        auth_value = Assoc("sasl", Base(mechanism))
    else:
        auth_value = Assoc("other", Base(auth.number))
    return (
        Assoc("version", Base(version)),
        Assoc("name", Base(name)),
        Assoc("authentication", auth_value),
    )


def _decode_unbind(op: Tlv) -> tuple[Value, ...]:
    if op.content:
        raise MalformedBerError("unbind request carries no content", op.offset)
    return ()


def _decode_result(op: Tlv) -> tuple[Value, ...]:
    children = _require_children(op, 3, "result")
    code = _int_like(children[0], "result code")
    matched = _octets(children[1], "matched DN")
    diagnostic = _octets(children[2], "diagnostic message")
    # Optional referral/serverSaslCreds elements are tolerated and dropped.
    return (
        Assoc("resultCode", Base(Enumerated(code))),
        Assoc("matchedDN", Base(matched)),
        Assoc("diagnosticMessage", Base(diagnostic)),
    )


def _decode_filter(tlv: Tlv, depth: int = 0) -> Value:
    if depth > _MAX_FILTER_DEPTH:
        raise MalformedBerError("filter nesting too deep", tlv.offset)
    if tlv.tag_class != CLASS_CONTEXT:
        raise MalformedBerError("filter choice must be context-tagged", tlv.offset)
    number = tlv.number
    if number in (0, 1):  # and / or
        parts = iter_children(tlv)
        if not parts:
            raise MalformedBerError("and/or filter needs at least one part", tlv.offset)
        label = "and" if number == 0 else "or"
        return Assoc(label, Seq(tuple(_decode_filter(p, depth + 1) for p in parts)))
    if number == 2:  # not
        parts = iter_children(tlv)
        if len(parts) != 1:
            raise MalformedBerError("not filter needs exactly one part", tlv.offset)
        return Assoc("not", _decode_filter(parts[0], depth + 1))
    if number == 3:  # equalityMatch
        parts = iter_children(tlv)
        if len(parts) != 2:
            raise MalformedBerError("equality match needs attr and value", tlv.offset)
        _attr_name(parts[0].content, parts[0].offset)
        return Assoc(
            "equalityMatch", Seq((Base(parts[0].content), Base(parts[1].content)))
        )
    if number == 7:  # present
        _attr_name(tlv.content, tlv.offset)
        return Assoc("present", Base(tlv.content))
    if number in (4, 5, 6, 8, 9):  # substrings / ge / le / approx / extensible
        return Assoc("unsupportedFilter", Base(number))
    raise MalformedBerError(f"unknown filter choice [{number}]", tlv.offset)


def _decode_search_rq(op: Tlv) -> tuple[Value, ...]:
    children = _require_children(op, 8, "search request")
    base = _octets(children[0], "base object")
    scope = _int_like(children[1], "scope")
    _int_like(children[2], "deref aliases")
    _int_like(children[3], "size limit")
    _int_like(children[4], "time limit")
    if children[5].tag != TAG_BOOLEAN:
        raise MalformedBerError("typesOnly must be BOOLEAN", children[5].offset)
    decode_boolean(children[5])
    filter_value = _decode_filter(children[6])
    attrs_tlv = children[7]
    if attrs_tlv.tag != TAG_SEQUENCE:
        raise MalformedBerError("attribute selection must be SEQUENCE", attrs_tlv.offset)
    selection = tuple(
        Base(_octets(a, "attribute selector")) for a in iter_children(attrs_tlv)
    )
    return (
        Assoc("baseObject", Base(base)),
        Assoc("scope", Base(Enumerated(scope))),
        Assoc("filter", filter_value),
        Assoc("attributes", Seq(selection)),
    )


def _decode_attr_list(tlv: Tlv, what: str) -> Seq:
    if tlv.tag != TAG_SEQUENCE:
        raise MalformedBerError(f"{what} must be SEQUENCE", tlv.offset)
    out = []
    for pair in iter_children(tlv):
        if pair.tag != TAG_SEQUENCE:
            raise MalformedBerError("attribute must be SEQUENCE", pair.offset)
        parts = iter_children(pair)
        if len(parts) != 2:
            raise MalformedBerError("attribute needs type and values", pair.offset)
        name = _attr_name(_octets(parts[0], "attribute type"), parts[0].offset)
        if parts[1].tag not in (TAG_SET, TAG_SEQUENCE):
            raise MalformedBerError("attribute values must be SET", parts[1].offset)
        vals = tuple(
            Base(_octets(v, "attribute value")) for v in iter_children(parts[1])
        )
        out.append(Assoc(name, Seq(vals)))
    return Seq(tuple(out))


def _decode_search_entry(op: Tlv) -> tuple[Value, ...]:
    children = _require_children(op, 2, "search entry")
    name = _octets(children[0], "object name")
    attrs = _decode_attr_list(children[1], "attribute list")
    return (Assoc("objectName", Base(name)), Assoc("attributes", attrs))


def _decode_add_rq(op: Tlv) -> tuple[Value, ...]:
    children = _require_children(op, 2, "add request")
    entry = _octets(children[0], "entry DN")
    attrs = _decode_attr_list(children[1], "attribute list")
    return (Assoc("entry", Base(entry)), Assoc("attributes", attrs))


def _decode_mod_rq(op: Tlv) -> tuple[Value, ...]:
    children = _require_children(op, 2, "modify request")
    entry = _octets(children[0], "entry DN")
    changes_tlv = children[1]
    if changes_tlv.tag != TAG_SEQUENCE:
        raise MalformedBerError("changes must be SEQUENCE", changes_tlv.offset)
    changes = []
    for change in iter_children(changes_tlv):
        if change.tag != TAG_SEQUENCE:
            raise MalformedBerError("change must be SEQUENCE", change.offset)
        parts = iter_children(change)
        if len(parts) != 2:
            raise MalformedBerError("change needs operation and modification", change.offset)
        op_code = _int_like(parts[0], "change operation")
        op_name = _MODIFY_OPS.get(op_code)
        if op_name is None:
            raise MalformedBerError(f"unknown change operation {op_code}", parts[0].offset)
        mod = parts[1]
        if mod.tag != TAG_SEQUENCE:
            raise MalformedBerError("modification must be SEQUENCE", mod.offset)
        mod_parts = iter_children(mod)
        if len(mod_parts) != 2:
            raise MalformedBerError("modification needs type and values", mod.offset)
        attr = _attr_name(_octets(mod_parts[0], "attribute type"), mod_parts[0].offset)
        if mod_parts[1].tag not in (TAG_SET, TAG_SEQUENCE):
            raise MalformedBerError("modification values must be SET", mod_parts[1].offset)
        vals = tuple(
            Base(_octets(v, "attribute value")) for v in iter_children(mod_parts[1])
        )
        changes.append(Assoc(op_name, Assoc(attr, Seq(vals))))
    return (Assoc("entry", Base(entry)), Assoc("changes", Seq(tuple(changes))))


def _decode_del_rq(op: Tlv) -> tuple[Value, ...]:
    # The delete request is primitive: content is the DN itself.
    return (Assoc("entry", Base(op.content)),)


_OP_DECODERS = {
    "BindRq": _decode_bind_rq,
    "BindRes": _decode_result,
    "UnbindRq": _decode_unbind,
    "SearchRq": _decode_search_rq,
    "SearchEntry": _decode_search_entry,
    "SearchDone": _decode_result,
    "ModRq": _decode_mod_rq,
    "ModRes": _decode_result,
    "AddRq": _decode_add_rq,
    "AddRes": _decode_result,
    "DelRq": _decode_del_rq,
    "DelRes": _decode_result,
}


# --- encoding ----------------------------------------------------------------


def encode(msg: Message, max_frame: int = DEFAULT_MAX_FRAME) -> WireFrame:
    """Encode a Message into one wire frame (minimal definite-length BER).
    decode(encode(m)) deep-equals m for every in-vocabulary message."""
    builder = _OP_ENCODERS.get(msg.shape)
    if builder is None:
        raise UnknownShapeError(f"shape {msg.shape!r} is not in the wire vocabulary")
    op_bytes = builder(msg)
    frame = encode_sequence(encode_integer(msg.correlation_id) + op_bytes)
    if len(frame) > max_frame:
        raise FrameTooLargeError(f"encoded frame of {len(frame)} bytes exceeds {max_frame}")
    return frame


def _need(msg: Message, label: str) -> Value:
    value = lookup_assoc(msg, label)
    if value is None:
        raise MissingValueError(label)
    return value


def _need_bytes(msg: Message, label: str) -> bytes:
    value = _need(msg, label)
    if not isinstance(value, Base) or not isinstance(value.scalar, bytes):
        raise CodecError(f"value {label!r} must be an octet-string Base")
    return value.scalar


def _need_int(msg: Message, label: str) -> int:
    value = _need(msg, label)
    if not isinstance(value, Base) or not isinstance(value.scalar, int):
        raise CodecError(f"value {label!r} must be an integer Base")
    return value.scalar


def _app_tag(shape: str, constructed: bool = True) -> int:
    return CLASS_APPLICATION | (CONSTRUCTED if constructed else 0) | SHAPE_TAGS[shape]


def _encode_bind_rq(msg: Message) -> bytes:
    version = _need_int(msg, "version")
    name = _need_bytes(msg, "name")
    auth = _need(msg, "authentication")
    if not isinstance(auth, Assoc):
        raise CodecError("authentication must be an Assoc")
    if auth.label == "simple":
        if not isinstance(auth.inner, Base) or not isinstance(auth.inner.scalar, bytes):
            raise CodecError("simple credentials must be octets")
        auth_bytes = encode_tlv(CLASS_CONTEXT | 0, auth.inner.scalar)
    elif auth.label == "sasl":
        if not isinstance(auth.inner, Base) or not isinstance(auth.inner.scalar, bytes):
            raise CodecError("sasl mechanism must be octets")
        auth_bytes = encode_tlv(
            CLASS_CONTEXT | CONSTRUCTED | 3, encode_octets(auth.inner.scalar)
        )
    else:
        raise CodecError(f"cannot encode authentication kind {auth.label!r}")
    content = encode_integer(version) + encode_octets(name) + auth_bytes
    return encode_tlv(_app_tag("BindRq"), content)


def _encode_unbind(msg: Message) -> bytes:
    return encode_tlv(_app_tag("UnbindRq", constructed=False), b"")


def _result_encoder(shape: str):
    def enc(msg: Message) -> bytes:
        code = _need(msg, "resultCode")
        if not isinstance(code, Base) or not isinstance(code.scalar, Enumerated):
            raise CodecError("resultCode must be an enumerated Base")
        matched = _need_bytes(msg, "matchedDN")
        diagnostic = _need_bytes(msg, "diagnosticMessage")
        content = (
            encode_enumerated(code.scalar.code)
            + encode_octets(matched)
            + encode_octets(diagnostic)
        )
        return encode_tlv(_app_tag(shape), content)

    return enc


def _encode_filter_value(value: Value) -> bytes:
    if not isinstance(value, Assoc):
        raise CodecError("filter value must be an Assoc")
    label, inner = value.label, value.inner
    if label == "present":
        if not isinstance(inner, Base) or not isinstance(inner.scalar, bytes):
            raise CodecError("present filter needs an attribute octet-string")
        return encode_tlv(CLASS_CONTEXT | 7, inner.scalar)
    if label == "equalityMatch":
        if not isinstance(inner, Seq) or len(inner.items) != 2:
            raise CodecError("equality filter needs attr and value")
        attr, val = inner.items
        if not (isinstance(attr, Base) and isinstance(attr.scalar, bytes)):
            raise CodecError("equality attr must be octets")
        if not (isinstance(val, Base) and isinstance(val.scalar, bytes)):
            raise CodecError("equality value must be octets")
        content = encode_octets(attr.scalar) + encode_octets(val.scalar)
        return encode_tlv(CLASS_CONTEXT | CONSTRUCTED | 3, content)
    if label in ("and", "or"):
        if not isinstance(inner, Seq) or not inner.items:
            raise CodecError("and/or filter needs at least one part")
        number = 0 if label == "and" else 1
        content = b"".join(_encode_filter_value(p) for p in inner.items)
        return encode_tlv(CLASS_CONTEXT | CONSTRUCTED | number, content)
    if label == "not":
        return encode_tlv(CLASS_CONTEXT | CONSTRUCTED | 2, _encode_filter_value(inner))
    raise CodecError(f"cannot encode filter label {label!r}")


def _encode_search_rq(msg: Message) -> bytes:
    base = _need_bytes(msg, "baseObject")
    scope = _need(msg, "scope")
    if not isinstance(scope, Base) or not isinstance(scope.scalar, Enumerated):
        raise CodecError("scope must be an enumerated Base")
    filter_value = _need(msg, "filter")
    attrs = lookup_assoc(msg, "attributes")
    selection = b""
    if attrs is not None:
        if not isinstance(attrs, Seq):
            raise CodecError("attribute selection must be a Seq")
        for a in attrs.items:
            if not isinstance(a, Base) or not isinstance(a.scalar, bytes):
                raise CodecError("attribute selector must be octets")
            selection += encode_octets(a.scalar)
    content = (
        encode_octets(base)
        + encode_enumerated(scope.scalar.code)
        + encode_enumerated(0)  # derefAliases: never
        + encode_integer(0)  # sizeLimit: none
        + encode_integer(0)  # timeLimit: none
        + encode_boolean(False)  # typesOnly
        + _encode_filter_value(filter_value)
        + encode_sequence(selection)
    )
    return encode_tlv(_app_tag("SearchRq"), content)


def _encode_attr_list(value: Value, what: str) -> bytes:
    if not isinstance(value, Seq):
        raise CodecError(f"{what} must be a Seq")
    out = b""
    for item in value.items:
        if not isinstance(item, Assoc) or not isinstance(item.inner, Seq):
            raise CodecError(f"{what} entries must be Assoc(name, Seq(values))")
        vals = b""
        for v in item.inner.items:
            if not isinstance(v, Base) or not isinstance(v.scalar, bytes):
                raise CodecError("attribute values must be octets")
            vals += encode_octets(v.scalar)
        pair = encode_octets(item.label.encode()) + encode_sequence(vals, TAG_SET)
        out += encode_sequence(pair)
    return encode_sequence(out)


def _encode_search_entry(msg: Message) -> bytes:
    name = _need_bytes(msg, "objectName")
    attrs = _need(msg, "attributes")
    content = encode_octets(name) + _encode_attr_list(attrs, "attribute list")
    return encode_tlv(_app_tag("SearchEntry"), content)


def _encode_add_rq(msg: Message) -> bytes:
    entry = _need_bytes(msg, "entry")
    attrs = _need(msg, "attributes")
    content = encode_octets(entry) + _encode_attr_list(attrs, "attribute list")
    return encode_tlv(_app_tag("AddRq"), content)


def _encode_mod_rq(msg: Message) -> bytes:
    entry = _need_bytes(msg, "entry")
    changes = _need(msg, "changes")
    if not isinstance(changes, Seq):
        raise CodecError("changes must be a Seq")
    body = b""
    for change in changes.items:
        if not isinstance(change, Assoc) or change.label not in _MODIFY_OP_CODES:
            raise CodecError("change must be Assoc(add|delete|replace, ...)")
        mod = change.inner
        if not isinstance(mod, Assoc) or not isinstance(mod.inner, Seq):
            raise CodecError("modification must be Assoc(attr, Seq(values))")
        vals = b""
        for v in mod.inner.items:
            if not isinstance(v, Base) or not isinstance(v.scalar, bytes):
                raise CodecError("modification values must be octets")
            vals += encode_octets(v.scalar)
        mod_bytes = encode_sequence(
            encode_octets(mod.label.encode()) + encode_sequence(vals, TAG_SET)
        )
        body += encode_sequence(
            encode_enumerated(_MODIFY_OP_CODES[change.label]) + mod_bytes
        )
    content = encode_octets(entry) + encode_sequence(body)
    return encode_tlv(_app_tag("ModRq"), content)


def _encode_del_rq(msg: Message) -> bytes:
    entry = _need_bytes(msg, "entry")
    return encode_tlv(_app_tag("DelRq", constructed=False), entry)


_OP_ENCODERS = {
    "BindRq": _encode_bind_rq,
    "BindRes": _result_encoder("BindRes"),
    "UnbindRq": _encode_unbind,
    "SearchRq": _encode_search_rq,
    "SearchEntry": _encode_search_entry,
    "SearchDone": _result_encoder("SearchDone"),
    "ModRq": _encode_mod_rq,
    "ModRes": _result_encoder("ModRes"),
    "AddRq": _encode_add_rq,
    "AddRes": _result_encoder("AddRes"),
    "DelRq": _encode_del_rq,
    "DelRes": _result_encoder("DelRes"),
}


# --- framing -----------------------------------------------------------------


def frame_stream(
    buffer: bytes, max_frame: int = DEFAULT_MAX_FRAME
) -> tuple[list[WireFrame], bytes]:
    """Split every complete frame off the front of ``buffer``.

    Returns (frames, remainder); the remainder is the trailing partial frame
    and must be retained by the caller for the next read. Never blocks and is
    invariant to how the byte stream was chunked. Raises MalformedBerError as
    soon as the leading byte cannot start a frame, and FrameTooLargeError for
    headers declaring more than ``max_frame`` content bytes.
    """
    frames: list[WireFrame] = []
    pos = 0
    while pos < len(buffer):
        if buffer[pos] != TAG_SEQUENCE:
            raise MalformedBerError(
                f"frame must start with SEQUENCE (0x30), got 0x{buffer[pos]:02x}", pos
            )
        header = read_header(buffer, pos, max_frame)
        if header is None:
            break
        _, length, header_len = header
        end = pos + header_len + length
        if end > len(buffer):
            break
        frames.append(bytes(buffer[pos:end]))
        pos = end
    return frames, bytes(buffer[pos:])


# --- convenience constructors -------------------------------------------------


def result_message(
    shape: str,
    correlation_id: int,
    code: int,
    matched_dn: bytes = b"",
    diagnostic: bytes = b"",
) -> Message:
    """Build a result-shaped message (BindRes/SearchDone/ModRes/AddRes/DelRes)."""
    if shape not in _RESULT_SHAPES:
        raise ValueError(f"{shape} is not a result shape")
    return Message(
        shape,
        (
            Assoc("resultCode", Base(Enumerated(code))),
            Assoc("matchedDN", Base(matched_dn)),
            Assoc("diagnosticMessage", Base(diagnostic)),
        ),
        correlation_id=correlation_id,
    )


def result_code(msg: Message) -> int | None:
    """Extract the result code from a result-shaped message, if present."""
    value = lookup_assoc(msg, "resultCode")
    if isinstance(value, Base) and isinstance(value.scalar, Enumerated):
        return value.scalar.code
    return None
