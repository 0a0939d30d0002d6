import random

import pytest
from hypothesis import given, settings, strategies as st

from svcemu.ber import (
    CodecError,
    FrameTooLargeError,
    MalformedBerError,
    MissingValueError,
    UnknownApplicationTagError,
    UnknownShapeError,
)
from svcemu.ldapcodec import (
    And,
    Equality,
    Not,
    Or,
    Present,
    UnsupportedFilterError,
    decode,
    encode,
    filter_from_value,
    filter_to_value,
    frame_stream,
    match_filter,
    result_code,
    result_message,
)
from svcemu.message import Assoc, Base, Enumerated, Message, Seq, lookup_assoc

from oracles import ber_tree, ber_int, random_message

# Frozen frames, hand-assembled and cross-checked against the reference
# parser below before being pinned.
BIND_RQ = bytes.fromhex("300c020101600702010304008000")
UNBIND_RQ = bytes.fromhex("30050201074200")
BIND_RES = bytes.fromhex("300c02010161070a010004000400")


def test_frozen_bind_rq_against_reference_parser():
    (envelope,) = ber_tree(BIND_RQ)
    assert (envelope.tag_class, envelope.number, envelope.constructed) == (0, 0x10, True)
    mid, op = envelope.kids
    assert ber_int(mid) == 1
    assert (op.tag_class, op.number) == (1, 0)  # application 0
    version, name, auth = op.kids
    assert ber_int(version) == 3
    assert name.content == b""
    assert (auth.tag_class, auth.number, auth.content) == (2, 0, b"")


def test_frozen_unbind_against_reference_parser():
    (envelope,) = ber_tree(UNBIND_RQ)
    mid, op = envelope.kids
    assert ber_int(mid) == 7
    assert (op.tag_class, op.number, op.constructed, op.content) == (1, 2, False, b"")


def test_decode_bind_rq():
    msg = decode(BIND_RQ)
    assert msg.shape == "BindRq"
    assert msg.correlation_id == 1
    assert lookup_assoc(msg, "version") == Base(3)
    assert lookup_assoc(msg, "name") == Base(b"")
    assert lookup_assoc(msg, "authentication") == Assoc("simple", Base(b""))
    assert encode(msg) == BIND_RQ


def test_decode_unbind():
    msg = decode(UNBIND_RQ)
    assert msg.shape == "UnbindRq"
    assert msg.correlation_id == 7
    assert msg.values == ()
    assert encode(msg) == UNBIND_RQ


def test_encode_bind_res_pinned_bytes():
    msg = result_message("BindRes", 1, 0)
    assert encode(msg) == BIND_RES
    # and the reference parser agrees about its structure
    (envelope,) = ber_tree(BIND_RES)
    mid, op = envelope.kids
    assert (op.tag_class, op.number) == (1, 1)
    code, matched, diagnostic = op.kids
    assert (code.tag_class, code.number) == (0, 0x0A)  # ENUMERATED
    assert ber_int(code) == 0
    assert matched.content == diagnostic.content == b""


def test_set_tag_at_top_is_malformed_at_offset_zero():
    bad = bytes.fromhex("310302010a")
    with pytest.raises(MalformedBerError) as excinfo:
        decode(bad)
    assert excinfo.value.offset == 0


def test_unknown_application_tag():
    # application tag 23 (extendedReq) is outside the vocabulary
    frame = bytes.fromhex("300702010177020400")
    with pytest.raises(UnknownApplicationTagError) as excinfo:
        decode(frame)
    assert excinfo.value.offset is not None


def test_unknown_shape_on_encode():
    with pytest.raises(UnknownShapeError):
        encode(Message("HttpGet"))


def test_missing_required_value_names_label():
    with pytest.raises(MissingValueError) as excinfo:
        encode(Message("BindRes", (), correlation_id=1))
    assert excinfo.value.label == "resultCode"


def test_decode_search_rq_with_filters():
    msg = Message(
        "SearchRq",
        (
            Assoc("baseObject", Base(b"ou=people,o=acme")),
            Assoc("scope", Base(Enumerated(2))),
            Assoc(
                "filter",
                filter_to_value(
                    And([Present("objectClass"), Not(Equality("uid", b"u3"))])
                ),
            ),
            Assoc("attributes", Seq((Base(b"cn"), Base(b"sn")))),
        ),
        correlation_id=9,
    )
    decoded = decode(encode(msg))
    assert decoded == msg
    flt = filter_from_value(lookup_assoc(decoded, "filter"))
    assert flt == And((Present("objectClass"), Not(Equality("uid", b"u3"))))


def test_unsupported_filter_choice_is_marked_not_fatal():
    # splice a substrings filter ([4]) into an otherwise valid search request
    msg = Message(
        "SearchRq",
        (
            Assoc("baseObject", Base(b"o=acme")),
            Assoc("scope", Base(Enumerated(2))),
            Assoc("filter", filter_to_value(Present("x"))),
            Assoc("attributes", Seq(())),
        ),
        correlation_id=1,
    )
    frame = bytearray(encode(msg))
    idx = bytes(frame).find(bytes.fromhex("870178"))  # present "x"
    assert idx > 0
    frame[idx] = 0xA4  # substrings choice, same length
    decoded = decode(bytes(frame))
    marked = lookup_assoc(decoded, "filter")
    assert marked == Assoc("unsupportedFilter", Base(4))
    with pytest.raises(UnsupportedFilterError):
        filter_from_value(marked)


def test_match_filter_semantics():
    attrs = {"objectClass": (b"person",), "uid": (b"u1",), "sn": (b"Adams",)}
    assert match_filter(Present("objectclass"), attrs)
    assert not match_filter(Present("mail"), attrs)
    assert match_filter(Equality("UID", b"u1"), attrs)
    assert not match_filter(Equality("uid", b"u2"), attrs)
    assert match_filter(And([Present("uid"), Equality("sn", b"Adams")]), attrs)
    assert match_filter(Or([Equality("uid", b"u2"), Present("sn")]), attrs)
    assert match_filter(Not(Equality("uid", b"u2")), attrs)


def test_and_or_require_parts():
    with pytest.raises(ValueError):
        And([])
    with pytest.raises(ValueError):
        Or([])


def test_result_code_helper():
    assert result_code(result_message("SearchDone", 1, 32)) == 32
    assert result_code(Message("SearchDone", ())) is None


def test_round_trip_volume_seeded():
    rng = random.Random(1234)
    for _ in range(500):
        msg = random_message(rng)
        assert decode(encode(msg)) == msg


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_round_trip_property(seed):
    msg = random_message(random.Random(seed))
    assert decode(encode(msg)) == msg


def test_decode_liberal_nonminimal_length():
    # Same bind request but with a long-form length for the envelope.
    body = BIND_RQ[2:]
    frame = bytes([0x30, 0x81, len(body)]) + body
    msg = decode(frame)
    assert msg.shape == "BindRq"
    # output side stays minimal
    assert encode(msg) == BIND_RQ


def test_decode_rejects_indefinite_length():
    with pytest.raises(MalformedBerError):
        decode(bytes.fromhex("3080020101600702010304008000 0000".replace(" ", "")))


def test_decode_rejects_trailing_bytes():
    with pytest.raises(MalformedBerError):
        decode(BIND_RQ + b"\x00")


# --- framing -------------------------------------------------------------------


def test_frame_stream_two_complete_frames():
    frames, rest = frame_stream(BIND_RQ + UNBIND_RQ)
    assert frames == [BIND_RQ, UNBIND_RQ]
    assert rest == b""


def test_frame_stream_split_frame():
    frames, rest = frame_stream(BIND_RQ[:3])
    assert frames == []
    assert rest == BIND_RQ[:3]
    frames, rest = frame_stream(rest + BIND_RQ[3:])
    assert frames == [BIND_RQ]
    assert rest == b""


def test_frame_stream_oversize_header():
    huge = bytes([0x30, 0x84]) + (2**30).to_bytes(4, "big")
    with pytest.raises(FrameTooLargeError):
        frame_stream(huge, max_frame=1024 * 1024)


def test_frame_stream_rejects_wrong_leading_tag():
    with pytest.raises(MalformedBerError) as excinfo:
        frame_stream(b"\x31\x03abc")
    assert excinfo.value.offset == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.data())
def test_frame_stream_chunking_invariant(seed, data):
    rng = random.Random(seed)
    stream = b"".join(encode(random_message(rng)) for _ in range(rng.randrange(1, 6)))
    cut_count = data.draw(st.integers(0, min(8, len(stream))))
    cuts = sorted(data.draw(
        st.lists(st.integers(0, len(stream)), min_size=cut_count, max_size=cut_count)
    ))
    pieces = [stream[a:b] for a, b in zip([0] + cuts, cuts + [len(stream)])]
    whole_frames, whole_rest = frame_stream(stream)
    chunked_frames, buffer = [], b""
    for piece in pieces:
        buffer += piece
        frames, buffer = frame_stream(buffer)
        chunked_frames.extend(frames)
    assert chunked_frames == whole_frames
    assert buffer == whole_rest


# --- fuzz safety ---------------------------------------------------------------


def test_fuzz_decode_structured_errors_only():
    rng = random.Random(99)
    for _ in range(5000):
        size = rng.randrange(0, 64)
        blob = bytes(rng.randrange(256) for _ in range(size))
        try:
            decode(blob)
        except CodecError:
            pass


def test_fuzz_mutated_valid_frames():
    rng = random.Random(5)
    for _ in range(2000):
        frame = bytearray(encode(random_message(rng)))
        for _ in range(rng.randrange(1, 4)):
            frame[rng.randrange(len(frame))] = rng.randrange(256)
        try:
            decode(bytes(frame))
        except CodecError:
            pass
