"""Minimal BER (tag-length-value) primitives.

Only what the LDAP wire needs: low-tag-number tags, definite lengths, and the
universal scalar types. Decoding is liberal (non-minimal length octets are
accepted), encoding always emits minimal definite-length form. Indefinite
lengths and multi-byte tag numbers are rejected outright; LDAP never uses
them. All decode errors carry the absolute byte offset of the offending
octet.
"""

from __future__ import annotations

from dataclasses import dataclass

# Universal tags.
TAG_BOOLEAN = 0x01
TAG_INTEGER = 0x02
TAG_OCTET_STRING = 0x04
TAG_ENUMERATED = 0x0A
TAG_SEQUENCE = 0x30
TAG_SET = 0x31

CLASS_MASK = 0xC0
CLASS_UNIVERSAL = 0x00
CLASS_APPLICATION = 0x40
CLASS_CONTEXT = 0x80
CONSTRUCTED = 0x20

DEFAULT_MAX_FRAME = 1024 * 1024


class CodecError(Exception):
    """Base for wire codec errors; ``offset`` is the byte position when the
    error came from decoding, else None."""

    def __init__(self, reason: str, offset: int | None = None):
        at = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"{reason}{at}")
        self.reason = reason
        self.offset = offset


class MalformedBerError(CodecError):
    pass


class FrameTooLargeError(CodecError):
    pass


class UnknownApplicationTagError(CodecError):
    pass


class UnknownShapeError(CodecError):
    pass


class MissingValueError(CodecError):
    def __init__(self, label: str):
        super().__init__(f"missing required value {label!r}")
        self.label = label


@dataclass(frozen=True)
class Tlv:
    """One decoded tag-length-value triple; ``offset`` is where its tag byte
    sits in the original buffer and ``content_start`` where its content
    begins (both for error reporting)."""

    tag: int
    content: bytes
    offset: int
    content_start: int

    @property
    def tag_class(self) -> int:
        return self.tag & CLASS_MASK

    @property
    def constructed(self) -> bool:
        return bool(self.tag & CONSTRUCTED)

    @property
    def number(self) -> int:
        return self.tag & 0x1F


def read_header(
    data: bytes, offset: int, max_len: int = DEFAULT_MAX_FRAME
) -> tuple[int, int, int] | None:
    """Parse a TLV header starting at ``offset``.

    Returns (tag, content_length, header_length), or None when more bytes are
    needed to finish the header. Raises MalformedBerError for indefinite or
    reserved length forms and FrameTooLargeError when the declared length
    exceeds ``max_len``.
    """
    if offset >= len(data):
        return None
    tag = data[offset]
    if tag & 0x1F == 0x1F:
        raise MalformedBerError("multi-byte tag numbers unsupported", offset)
    if offset + 1 >= len(data):
        return None
    first = data[offset + 1]
    if first < 0x80:
        length, header_len = first, 2
    elif first == 0x80:
        raise MalformedBerError("indefinite length encoding rejected", offset + 1)
    else:
        n = first & 0x7F
        if n > 4:
            raise MalformedBerError(f"length of length {n} too large", offset + 1)
        if offset + 2 + n > len(data):
            return None
        length = int.from_bytes(data[offset + 2 : offset + 2 + n], "big")
        header_len = 2 + n
    if length > max_len:
        raise FrameTooLargeError(
            f"declared length {length} exceeds maximum {max_len}", offset
        )
    return tag, length, header_len


def read_tlv(data: bytes, offset: int, max_len: int = DEFAULT_MAX_FRAME) -> tuple[Tlv, int]:
    """Read one complete TLV at ``offset``; returns (tlv, next_offset).
    Truncated input is a MalformedBerError (framing happens upstream)."""
    header = read_header(data, offset, max_len)
    if header is None:
        raise MalformedBerError("truncated TLV header", offset)
    tag, length, header_len = header
    start = offset + header_len
    end = start + length
    if end > len(data):
        raise MalformedBerError(f"content truncated: need {length} bytes", start)
    return Tlv(tag, bytes(data[start:end]), offset, start), end


def iter_children(tlv: Tlv, max_len: int = DEFAULT_MAX_FRAME) -> list[Tlv]:
    """Decode the children of a constructed TLV; offsets stay absolute with
    respect to the original buffer."""
    children = []
    pos = 0
    base = tlv.content_start
    data = tlv.content
    while pos < len(data):
        header = read_header(data, pos, max_len)
        if header is None:
            raise MalformedBerError("truncated child TLV", base + pos)
        tag, length, header_len = header
        start = pos + header_len
        end = start + length
        if end > len(data):
            raise MalformedBerError("child content truncated", base + pos)
        children.append(Tlv(tag, bytes(data[start:end]), base + pos, base + start))
        pos = end
    return children


def decode_integer(tlv: Tlv) -> int:
    if len(tlv.content) == 0:
        raise MalformedBerError("empty integer content", tlv.offset)
    return int.from_bytes(tlv.content, "big", signed=True)


def decode_boolean(tlv: Tlv) -> bool:
    if len(tlv.content) != 1:
        raise MalformedBerError("boolean content must be one octet", tlv.offset)
    return tlv.content[0] != 0


# --- encoding ---------------------------------------------------------------


def encode_length(length: int) -> bytes:
    if length < 0x80:
        return bytes([length])
    body = length.to_bytes((length.bit_length() + 7) // 8, "big")
    return bytes([0x80 | len(body)]) + body


def encode_tlv(tag: int, content: bytes) -> bytes:
    return bytes([tag]) + encode_length(len(content)) + content


def encode_integer(value: int, tag: int = TAG_INTEGER) -> bytes:
    n = max(1, (value.bit_length() + 8) // 8) if value >= 0 else ((~value).bit_length() // 8 + 1)
    return encode_tlv(tag, value.to_bytes(n, "big", signed=True))


def encode_enumerated(code: int) -> bytes:
    return encode_integer(code, TAG_ENUMERATED)


def encode_boolean(value: bool) -> bytes:
    return encode_tlv(TAG_BOOLEAN, b"\xff" if value else b"\x00")


def encode_octets(value: bytes, tag: int = TAG_OCTET_STRING) -> bytes:
    return encode_tlv(tag, value)


def encode_sequence(children: bytes, tag: int = TAG_SEQUENCE) -> bytes:
    return encode_tlv(tag, children)
