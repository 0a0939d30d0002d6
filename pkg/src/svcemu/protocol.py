"""Protocol terms, recursive specifications, and their small-step semantics.

A protocol constrains the temporal order of message shapes on a channel. It is
written in a small process algebra: interaction prefixes (receive ``?`` or
transmit ``!`` a shape, optionally *contractive*), binary choice between
interactions, free parallel composition (*product*), and subservient parallel
composition (*extension*). Recursion goes through named declarations.

Contraction is the interesting rule: when a contractive interaction fires in a
base term, every extension stacked above that base is discarded. The liveness
signal travels upward through nested extension layers and is absorbed at
product boundaries and at the root, so a contraction inside one product
operand never kills its sibling.

Stepping is pure: terms are immutable and a step returns a fresh term. The
deterministic ``first-match`` policy resolves overlapping alternatives toward
the structurally leftmost branch (base before extension, left before right);
``strict`` reports the ambiguity instead, which the exhaustive trace
enumerator uses to explore every branch.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Optional, Union


class ProtocolError(Exception):
    """Base for protocol specification errors."""


class UnboundVariableError(ProtocolError):
    def __init__(self, name: str):
        super().__init__(f"unbound protocol variable: {name}")
        self.name = name


class UnguardedRecursionError(ProtocolError):
    def __init__(self, cycle: str):
        super().__init__(f"unguarded recursion through: {cycle}")
        self.cycle = cycle


class ProtocolSyntaxError(ProtocolError):
    def __init__(self, line: int, col: int, reason: str):
        super().__init__(f"{line}:{col}: {reason}")
        self.line = line
        self.col = col
        self.reason = reason


class Direction(enum.Enum):
    RECEIVE = "?"
    TRANSMIT = "!"


@dataclass(frozen=True, slots=True)
class Event:
    """A direction/shape pair, from the modeled service's perspective."""

    direction: Direction
    shape: str

    def __str__(self) -> str:
        return f"{self.direction.value}{self.shape}"


def recv(shape: str) -> Event:
    return Event(Direction.RECEIVE, shape)


def xmit(shape: str) -> Event:
    return Event(Direction.TRANSMIT, shape)


# --- terms -----------------------------------------------------------------


class ProtocolTerm:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Inaction(ProtocolTerm):
    def __str__(self) -> str:
        return "0"


INACTION = Inaction()


@dataclass(frozen=True, slots=True)
class Std(ProtocolTerm):
    """Standard interaction prefix: fire the event, continue."""

    event: Event
    continuation: ProtocolTerm

    def __str__(self) -> str:
        return f"{self.event}.{_substr(self.continuation)}"


@dataclass(frozen=True, slots=True)
class Contr(ProtocolTerm):
    """Contractive interaction prefix: firing it tears down enclosing
    extensions stacked on the term it lives in."""

    event: Event
    continuation: ProtocolTerm

    def __str__(self) -> str:
        return f"{self.event}!.{_substr(self.continuation)}"


@dataclass(frozen=True, slots=True)
class Choice(ProtocolTerm):
    """Binary choice. Operands must be interactions (Std/Contr/Choice)."""

    left: ProtocolTerm
    right: ProtocolTerm

    def __post_init__(self) -> None:
        for side in (self.left, self.right):
            if not isinstance(side, (Std, Contr, Choice)):
                raise ProtocolError(
                    f"choice operands must be interactions, got {type(side).__name__}"
                )

    def __str__(self) -> str:
        return f"{self.left} + {self.right}"


@dataclass(frozen=True, slots=True)
class Product(ProtocolTerm):
    """Free parallel composition: both operands interleave independently."""

    p1: ProtocolTerm
    p2: ProtocolTerm

    def __str__(self) -> str:
        return f"{_substr(self.p1)} x {_substr(self.p2)}"


@dataclass(frozen=True, slots=True)
class Extend(ProtocolTerm):
    """Subservient parallel composition: the extension interleaves with the
    base, but a contraction in the base discards the extension."""

    base: ProtocolTerm
    extension: ProtocolTerm

    def __str__(self) -> str:
        return f"{_substr(self.base)} |> {_substr(self.extension)}"


@dataclass(frozen=True, slots=True)
class Var(ProtocolTerm):
    name: str

    def __str__(self) -> str:
        return self.name


def _substr(t: ProtocolTerm) -> str:
    if isinstance(t, (Inaction, Var, Std, Contr)):
        return str(t)
    return f"({t})"


def render_term(term: ProtocolTerm, limit: int = 160) -> str:
    """Compact textual rendering of a term, truncated for diagnostics."""
    s = str(term)
    return s if len(s) <= limit else s[: limit - 3] + "..."


# --- specifications --------------------------------------------------------


@dataclass(frozen=True)
class ProtocolSpec:
    """Named recursive declarations plus a root term.

    Validated closed (every Var bound) and guarded (every cyclic path through
    the declarations passes at least one interaction prefix) at construction,
    so stepping always terminates.
    """

    declarations: Mapping[str, ProtocolTerm]
    root: ProtocolTerm

    def __init__(self, declarations: Mapping[str, ProtocolTerm], root: ProtocolTerm):
        object.__setattr__(self, "declarations", dict(declarations))
        object.__setattr__(self, "root", root)
        self._validate()

    def _validate(self) -> None:
        for body in [self.root, *self.declarations.values()]:
            for v in _free_vars(body):
                if v not in self.declarations:
                    raise UnboundVariableError(v)
        for name in self.declarations:
            _check_guarded(self.declarations, self.declarations[name], (name,))


def _free_vars(term: ProtocolTerm) -> Iterator[str]:
    stack = [term]
    while stack:
        t = stack.pop()
        if isinstance(t, Var):
            yield t.name
        elif isinstance(t, (Std, Contr)):
            stack.append(t.continuation)
        elif isinstance(t, Choice):
            stack += [t.left, t.right]
        elif isinstance(t, Product):
            stack += [t.p1, t.p2]
        elif isinstance(t, Extend):
            stack += [t.base, t.extension]


def _check_guarded(
    decls: Mapping[str, ProtocolTerm], term: ProtocolTerm, path: tuple[str, ...]
) -> None:
    # Walk only the prefix-free positions; reaching a variable already on the
    # path means a cycle with zero interaction prefixes.
    if isinstance(term, (Inaction, Std, Contr)):
        return
    if isinstance(term, Choice):
        _check_guarded(decls, term.left, path)
        _check_guarded(decls, term.right, path)
    elif isinstance(term, Product):
        _check_guarded(decls, term.p1, path)
        _check_guarded(decls, term.p2, path)
    elif isinstance(term, Extend):
        _check_guarded(decls, term.base, path)
        _check_guarded(decls, term.extension, path)
    elif isinstance(term, Var):
        if term.name in path:
            raise UnguardedRecursionError(" -> ".join(path + (term.name,)))
        if term.name in decls:
            _check_guarded(decls, decls[term.name], path + (term.name,))


# --- step semantics --------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Progress:
    next: ProtocolTerm
    contracted: bool


@dataclass(frozen=True, slots=True)
class NoTransition:
    pass


@dataclass(frozen=True, slots=True)
class Ambiguous:
    count: int


StepOutcome = Union[Progress, NoTransition, Ambiguous]

NO_TRANSITION = NoTransition()

FIRST_MATCH = "first-match"
STRICT = "strict"


def _product(p1: ProtocolTerm, p2: ProtocolTerm) -> ProtocolTerm:
    if isinstance(p1, Inaction):
        return p2
    if isinstance(p2, Inaction):
        return p1
    return Product(p1, p2)


def _extend(base: ProtocolTerm, extension: ProtocolTerm) -> ProtocolTerm:
    if isinstance(extension, Inaction):
        return base
    return Extend(base, extension)


def step_alternatives(
    spec: ProtocolSpec, term: ProtocolTerm, event: Event
) -> list[tuple[ProtocolTerm, bool]]:
    """Every way ``event`` can fire in ``term``, in structural first-match
    order (base before extension, left before right). Each alternative is the
    normalized successor term plus the live-contraction flag at this level."""
    if isinstance(term, Inaction):
        return []
    if isinstance(term, Std):
        return [(term.continuation, False)] if term.event == event else []
    if isinstance(term, Contr):
        return [(term.continuation, True)] if term.event == event else []
    if isinstance(term, Choice):
        return step_alternatives(spec, term.left, event) + step_alternatives(
            spec, term.right, event
        )
    if isinstance(term, Var):
        try:
            body = spec.declarations[term.name]
        except KeyError:
            raise UnboundVariableError(term.name) from None
        return step_alternatives(spec, body, event)
    if isinstance(term, Product):
        alts = [
            (_product(n, term.p2), False)
            for n, _ in step_alternatives(spec, term.p1, event)
        ]
        alts += [
            (_product(term.p1, n), False)
            for n, _ in step_alternatives(spec, term.p2, event)
        ]
        return alts
    assert isinstance(term, Extend)
    alts = []
    for n, contracted in step_alternatives(spec, term.base, event):
        if contracted:
            alts.append((n, True))  # extension discarded
        else:
            alts.append((_extend(n, term.extension), False))
    for n, contracted in step_alternatives(spec, term.extension, event):
        alts.append((_extend(term.base, n), contracted))
    return alts


def step(
    spec: ProtocolSpec,
    term: ProtocolTerm,
    event: Event,
    policy: str = FIRST_MATCH,
) -> StepOutcome:
    """Advance ``term`` by one event.

    ``first-match`` resolves overlap deterministically toward the leftmost
    enabled branch; ``strict`` reports Ambiguous(n) when more than one branch
    enables the event.
    """
    if policy not in (FIRST_MATCH, STRICT):
        raise ValueError(f"unknown step policy: {policy}")
    alts = step_alternatives(spec, term, event)
    if not alts:
        return NO_TRANSITION
    if policy == STRICT and len(alts) > 1:
        return Ambiguous(len(alts))
    nxt, contracted = alts[0]
    return Progress(nxt, contracted)


def enabled_events(spec: ProtocolSpec, term: ProtocolTerm) -> frozenset[Event]:
    """The set of events the term can fire right now.

    Computed syntactically from the reachable prefix heads (a code path
    independent of :func:`step`, which the test suite exploits as a
    cross-check): an event is enabled iff it heads a prefix reachable without
    passing any other prefix.
    """
    return _initials(spec, term, frozenset())


def _initials(
    spec: ProtocolSpec, term: ProtocolTerm, active: frozenset[str]
) -> frozenset[Event]:
    if isinstance(term, Inaction):
        return frozenset()
    if isinstance(term, (Std, Contr)):
        return frozenset((term.event,))
    if isinstance(term, Choice):
        return _initials(spec, term.left, active) | _initials(spec, term.right, active)
    if isinstance(term, Product):
        return _initials(spec, term.p1, active) | _initials(spec, term.p2, active)
    if isinstance(term, Extend):
        return _initials(spec, term.base, active) | _initials(
            spec, term.extension, active
        )
    assert isinstance(term, Var)
    if term.name not in spec.declarations:
        raise UnboundVariableError(term.name)
    if term.name in active:
        raise UnguardedRecursionError(term.name)
    return _initials(spec, spec.declarations[term.name], active | {term.name})


def enumerate_traces(
    spec: ProtocolSpec, max_depth: int, term: Optional[ProtocolTerm] = None
) -> frozenset[tuple[Event, ...]]:
    """All event sequences of length <= max_depth reachable from ``term``
    (default: the spec root), exploring every alternative of every ambiguous
    step. The empty trace is always included."""
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    start = spec.root if term is None else term
    memo: dict[tuple[ProtocolTerm, int], frozenset[tuple[Event, ...]]] = {}

    def go(t: ProtocolTerm, depth: int) -> frozenset[tuple[Event, ...]]:
        key = (t, depth)
        cached = memo.get(key)
        if cached is not None:
            return cached
        traces: set[tuple[Event, ...]] = {()}
        if depth > 0:
            for event in _initials(spec, t, frozenset()):
                for nxt, _ in step_alternatives(spec, t, event):
                    for suffix in go(nxt, depth - 1):
                        traces.add((event,) + suffix)
        result = frozenset(traces)
        memo[key] = result
        return result

    return go(start, max_depth)


def receive_shapes(spec: ProtocolSpec) -> frozenset[str]:
    """Every shape the spec can ever receive (reachable declarations plus the
    root), used to validate handler coverage at endpoint construction."""
    shapes: set[str] = set()
    seen: set[str] = set()
    stack: list[ProtocolTerm] = [spec.root]
    while stack:
        t = stack.pop()
        if isinstance(t, (Std, Contr)):
            if t.event.direction is Direction.RECEIVE:
                shapes.add(t.event.shape)
            stack.append(t.continuation)
        elif isinstance(t, Choice):
            stack += [t.left, t.right]
        elif isinstance(t, Product):
            stack += [t.p1, t.p2]
        elif isinstance(t, Extend):
            stack += [t.base, t.extension]
        elif isinstance(t, Var):
            if t.name not in seen:
                seen.add(t.name)
                stack.append(spec.declarations[t.name])
    return frozenset(shapes)


# --- the shipped LDAP protocol ---------------------------------------------

# Textual form of the LDAP directory-server protocol; kept in sync with
# build_ldap_protocol() by a test that parses this and compares ASTs.
LDAP_PROTOCOL_TEXT = """\
# LDAP directory-server protocol, service perspective.
# Bind and unbind are contractive: they terminate any pending operations.
Base = ?UnbindRq!.0
     + ?BindRq!.(!BindRes.Base)
     + ?SearchRq.(Base |> Search)
     + ?ModRq.(Base |> !ModRes.0)
     + ?AddRq.(Base |> !AddRes.0)
     + ?DelRq.(Base |> !DelRes.0)
and
Search = !SearchEntry.Search + !SearchDone.0
in Base
"""


def build_ldap_protocol() -> ProtocolSpec:
    """The LDAP directory-server protocol: a six-way choice of requests where
    bind/unbind contract away pending operations, and search fans out into a
    self-recursive entry stream terminated by a done marker."""
    base = Var("Base")
    search = Var("Search")
    branches = [
        Contr(recv("UnbindRq"), INACTION),
        Contr(recv("BindRq"), Std(xmit("BindRes"), base)),
        Std(recv("SearchRq"), Extend(base, search)),
        Std(recv("ModRq"), Extend(base, Std(xmit("ModRes"), INACTION))),
        Std(recv("AddRq"), Extend(base, Std(xmit("AddRes"), INACTION))),
        Std(recv("DelRq"), Extend(base, Std(xmit("DelRes"), INACTION))),
    ]
    base_body = branches[0]
    for b in branches[1:]:
        base_body = Choice(base_body, b)
    search_body = Choice(
        Std(xmit("SearchEntry"), search), Std(xmit("SearchDone"), INACTION)
    )
    return ProtocolSpec({"Base": base_body, "Search": search_body}, base)


# --- concrete syntax --------------------------------------------------------
#
#   spec       := [decl ("and" decl)*] "in" term
#   decl       := NAME "=" term
#   term       := extterm ("x" extterm)*          product, loosest
#   extterm    := choiceterm ("|>" choiceterm)*   extension
#   choiceterm := prefixterm ("+" prefixterm)*    choice over interactions
#   prefixterm := ("?"|"!") NAME ["!"] "." prefixterm | primary
#   primary    := "0" | NAME | "(" term ")"
#
# "#" starts a comment to end of line. "and", "in" and "x" are reserved words.

_TOKEN_RE = re.compile(
    r"""(?P<ws>[ \t\r]+)
      | (?P<comment>\#[^\n]*)
      | (?P<nl>\n)
      | (?P<op>\|>|[=+?!.()])
      | (?P<zero>0)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)

_RESERVED = {"and", "in", "x"}


@dataclass(frozen=True)
class _Token:
    kind: str  # 'op', 'zero', 'name', 'and', 'in', 'x', 'eof'
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ProtocolSyntaxError(line, col, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        value = m.group()
        if kind == "nl":
            line += 1
            col = 1
        elif kind in ("ws", "comment"):
            col += len(value)
        elif kind == "name" and value in _RESERVED:
            tokens.append(_Token(value, value, line, col))
            col += len(value)
        else:
            assert kind is not None
            tokens.append(_Token(kind, value, line, col))
            col += len(value)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, reason: str, tok: Optional[_Token] = None) -> "ProtocolSyntaxError":
        tok = tok or self.peek()
        return ProtocolSyntaxError(tok.line, tok.col, reason)

    def expect(self, kind: str, text: Optional[str] = None) -> _Token:
        tok = self.next()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise self.fail(f"expected {want!r}, got {tok.text or 'end of input'!r}", tok)
        return tok

    def parse_spec(self) -> ProtocolSpec:
        declarations: dict[str, ProtocolTerm] = {}
        while self.peek().kind == "name" and self._lookahead_is_decl():
            name_tok = self.next()
            self.expect("op", "=")
            body = self.parse_term()
            if name_tok.text in declarations:
                raise self.fail(f"duplicate declaration {name_tok.text!r}", name_tok)
            declarations[name_tok.text] = body
            if self.peek().kind == "and":
                self.next()
                if not (self.peek().kind == "name" and self._lookahead_is_decl()):
                    raise self.fail("expected declaration after 'and'")
        self.expect("in")
        root = self.parse_term()
        self.expect("eof")
        return ProtocolSpec(declarations, root)

    def _lookahead_is_decl(self) -> bool:
        nxt = self.tokens[self.pos + 1]
        return nxt.kind == "op" and nxt.text == "="

    def parse_term(self) -> ProtocolTerm:
        left = self.parse_extterm()
        while self.peek().kind == "x":
            self.next()
            left = Product(left, self.parse_extterm())
        return left

    def parse_extterm(self) -> ProtocolTerm:
        left = self.parse_choiceterm()
        while self.peek().kind == "op" and self.peek().text == "|>":
            self.next()
            left = Extend(left, self.parse_choiceterm())
        return left

    def parse_choiceterm(self) -> ProtocolTerm:
        first_tok = self.peek()
        left = self.parse_prefixterm()
        while self.peek().kind == "op" and self.peek().text == "+":
            plus = self.next()
            right_tok = self.peek()
            right = self.parse_prefixterm()
            try:
                left = Choice(left, right)
            except ProtocolError as exc:
                bad = right_tok if isinstance(right, (Var, Inaction, Product, Extend)) else first_tok
                raise self.fail(str(exc), bad) from None
        return left

    def parse_prefixterm(self) -> ProtocolTerm:
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("?", "!"):
            self.next()
            direction = Direction.RECEIVE if tok.text == "?" else Direction.TRANSMIT
            shape = self.expect("name").text
            contractive = False
            if self.peek().kind == "op" and self.peek().text == "!":
                self.next()
                contractive = True
            self.expect("op", ".")
            cont = self.parse_prefixterm()
            event = Event(direction, shape)
            return Contr(event, cont) if contractive else Std(event, cont)
        return self.parse_primary()

    def parse_primary(self) -> ProtocolTerm:
        tok = self.next()
        if tok.kind == "zero":
            return INACTION
        if tok.kind == "name":
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            inner = self.parse_term()
            self.expect("op", ")")
            return inner
        raise self.fail(f"expected a term, got {tok.text or 'end of input'!r}", tok)


def parse_protocol(text: str) -> ProtocolSpec:
    """Parse the textual protocol syntax into a validated specification.

    Raises ProtocolSyntaxError with line/column on malformed input,
    UnboundVariableError for names never declared, and
    UnguardedRecursionError for prefix-free declaration cycles.
    """
    return _Parser(_tokenize(text)).parse_spec()
