"""Sparse multivariate polynomials with exact integer coefficients.

A monomial is a tuple of ``(variable_id, exponent)`` pairs, strictly ascending
by variable id; the empty tuple is the constant monomial.  A polynomial maps
monomials to non-zero Python ints.  Values are immutable once built.
"""

from __future__ import annotations

import hashlib
import random
import re
import struct
from collections.abc import Iterable, Iterator, Mapping
from types import MappingProxyType

Monomial = tuple[tuple[int, int], ...]

MAGIC = b"SPLY"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sBI")
_U16 = struct.Struct("<H")
_FACTOR = struct.Struct("<IH")
_MAX_U16 = 0xFFFF
_MAX_U32 = 0xFFFFFFFF


class FormatError(ValueError):
    """Malformed serialized polynomial."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def monomial_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


def grlex_key(m: Monomial):
    """Sort key for graded-lexicographic order (x0 > x1 > ...)."""
    return (monomial_degree(m), tuple((-v, e) for v, e in m))


def monomial_mul(m1: Monomial, m2: Monomial) -> Monomial:
    if not m1:
        return m2
    if not m2:
        return m1
    out = []
    i = j = 0
    n1, n2 = len(m1), len(m2)
    while i < n1 and j < n2:
        v1, e1 = m1[i]
        v2, e2 = m2[j]
        if v1 == v2:
            out.append((v1, e1 + e2))
            i += 1
            j += 1
        elif v1 < v2:
            out.append(m1[i])
            i += 1
        else:
            out.append(m2[j])
            j += 1
    out.extend(m1[i:])
    out.extend(m2[j:])
    return tuple(out)


def monomial_from_ids(ids: Iterable[int]) -> Monomial:
    """Collapse a multiset of variable ids into a canonical monomial."""
    ids = sorted(ids)
    out = []
    for v in ids:
        if out and out[-1][0] == v:
            out[-1][1] += 1
        else:
            out.append([v, 1])
    return tuple((v, e) for v, e in out)


def _check_monomial(m) -> Monomial:
    m = tuple((int(v), int(e)) for v, e in m)
    prev = -1
    for v, e in m:
        if v < 0:
            raise ValueError(f"negative variable id {v}")
        if v <= prev:
            raise ValueError(f"monomial factors not strictly ascending: {m}")
        if e <= 0:
            raise ValueError(f"non-positive exponent in {m}")
        prev = v
    return m


class Polynomial:
    """Immutable sparse polynomial over the integers.

    ``Polynomial({((0, 2), (3, 1)): 4, (): -7})`` is ``4*x0^2*x3 - 7``.
    Zero coefficients are dropped on construction.
    """

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, int] | None = None):
        clean: dict[Monomial, int] = {}
        if terms:
            for m, c in terms.items():
                c = int(c)
                if c:
                    m = _check_monomial(m)
                    clean[m] = clean.get(m, 0) + c
                    if not clean[m]:
                        del clean[m]
        self._terms = clean
        self._hash = None

    @classmethod
    def _wrap(cls, terms: dict[Monomial, int]) -> "Polynomial":
        # trusted path: terms already canonical, never mutated afterwards
        p = cls.__new__(cls)
        p._terms = terms
        p._hash = None
        return p

    @classmethod
    def constant(cls, c: int) -> "Polynomial":
        return cls._wrap({(): int(c)} if c else {})

    @classmethod
    def variable(cls, var: int, coeff: int = 1) -> "Polynomial":
        if var < 0:
            raise ValueError(f"negative variable id {var}")
        return cls._wrap({((var, 1),): int(coeff)} if coeff else {})

    @classmethod
    def from_id_counts(cls, counts: Mapping[tuple[int, ...], int]) -> "Polynomial":
        """Build from ``{sorted tuple of variable ids: coefficient}``.

        Used by the invariant kernels, which accumulate products of tensor
        entries keyed by the sorted ids of their factors.
        """
        terms = {}
        for ids, c in counts.items():
            if c:
                terms[monomial_from_ids(ids)] = c
        return cls._wrap(terms)

    @property
    def terms(self) -> Mapping[Monomial, int]:
        return MappingProxyType(self._terms)

    def num_terms(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def variables(self) -> set[int]:
        return {v for m in self._terms for v, _ in m}

    def degrees(self) -> set[int]:
        return {monomial_degree(m) for m in self._terms}

    def sorted_terms(self) -> list[tuple[Monomial, int]]:
        """Terms in graded-lexicographic descending order."""
        return sorted(self._terms.items(), key=lambda t: grlex_key(t[0]), reverse=True)

    def __len__(self) -> int:
        return len(self._terms)

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __iter__(self) -> Iterator[tuple[Monomial, int]]:
        return iter(self._terms.items())

    def __eq__(self, other) -> bool:
        if isinstance(other, Polynomial):
            return self._terms == other._terms
        if isinstance(other, int):
            return self._terms == ({(): other} if other else {})
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __add__(self, other):
        if isinstance(other, int):
            other = Polynomial.constant(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return add(self, other)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial._wrap({m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        if isinstance(other, int):
            other = Polynomial.constant(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return add(self, -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, int):
            return scale(self, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return mul(self, other)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        if not self._terms:
            return "Polynomial(0)"
        parts = []
        for m, c in self.sorted_terms()[:8]:
            mono = "*".join(f"x{v}" + (f"^{e}" if e > 1 else "") for v, e in m)
            parts.append(f"{c:+d}" + (f"*{mono}" if mono else ""))
        more = " ..." if len(self._terms) > 8 else ""
        return f"Polynomial({' '.join(parts)}{more})"


ZERO = Polynomial._wrap({})
ONE = Polynomial.constant(1)


def add(p: Polynomial, q: Polynomial) -> Polynomial:
    if len(p._terms) < len(q._terms):
        p, q = q, p
    if not q._terms:
        return p
    out = dict(p._terms)
    get = out.get
    for m, c in q._terms.items():
        s = get(m, 0) + c
        if s:
            out[m] = s
        else:
            del out[m]
    return Polynomial._wrap(out)


def sum_polynomials(polys: Iterable[Polynomial]) -> Polynomial:
    """Sum many polynomials with a single accumulator dict."""
    out: dict[Monomial, int] = {}
    get = out.get
    for p in polys:
        for m, c in p._terms.items():
            out[m] = get(m, 0) + c
    return Polynomial._wrap({m: c for m, c in out.items() if c})


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    out: dict[Monomial, int] = {}
    get = out.get
    for m1, c1 in p._terms.items():
        for m2, c2 in q._terms.items():
            m = monomial_mul(m1, m2)
            out[m] = get(m, 0) + c1 * c2
    return Polynomial._wrap({m: c for m, c in out.items() if c})


def scale(p: Polynomial, c: int) -> Polynomial:
    c = int(c)
    if c == 0:
        return ZERO
    if c == 1:
        return p
    return Polynomial._wrap({m: c * v for m, v in p._terms.items()})


def num_terms(p: Polynomial) -> int:
    return len(p._terms)


def is_zero(p: Polynomial) -> bool:
    return not p._terms


# -- binary format ---------------------------------------------------------


def serialize(p: Polynomial) -> bytes:
    """Canonical little-endian binary encoding (terms in grlex descending order)."""
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(p._terms))]
    append = parts.append
    pack_u16 = _U16.pack
    pack_factor = _FACTOR.pack
    for m, c in p.sorted_terms():
        mag = -c if c < 0 else c
        nbytes = (mag.bit_length() + 7) // 8
        if nbytes > _MAX_U16:
            raise OverflowError("coefficient magnitude exceeds 65535 bytes")
        if len(m) > _MAX_U16:
            raise OverflowError("too many factors in monomial")
        append(b"\x01" if c < 0 else b"\x00")
        append(pack_u16(nbytes))
        append(mag.to_bytes(nbytes, "little"))
        append(pack_u16(len(m)))
        for v, e in m:
            if v > _MAX_U32 or e > _MAX_U16:
                raise OverflowError(f"factor {(v, e)} does not fit the wire format")
            append(pack_factor(v, e))
    return b"".join(parts)


def deserialize(data: bytes) -> Polynomial:
    buf = memoryview(data)
    n = len(buf)
    if n < _HEADER.size:
        raise FormatError("truncated header", n)
    magic, version, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    off = _HEADER.size
    terms: dict[Monomial, int] = {}
    prev_key = None
    unpack_u16 = _U16.unpack_from
    unpack_factor = _FACTOR.unpack_from
    for _ in range(count):
        term_off = off
        if off + 3 > n:
            raise FormatError("truncated term", off)
        sign = buf[off]
        if sign > 1:
            raise FormatError(f"bad sign byte {sign:#04x}", off)
        (nbytes,) = unpack_u16(buf, off + 1)
        off += 3
        if nbytes == 0:
            raise FormatError("zero coefficient", off - 2)
        if off + nbytes + 2 > n:
            raise FormatError("truncated coefficient", off)
        mag = int.from_bytes(buf[off:off + nbytes], "little")
        if buf[off + nbytes - 1] == 0:
            raise FormatError("non-minimal coefficient encoding", off + nbytes - 1)
        off += nbytes
        (nfac,) = unpack_u16(buf, off)
        off += 2
        if off + nfac * _FACTOR.size > n:
            raise FormatError("truncated factor list", off)
        factors = []
        last = -1
        for _ in range(nfac):
            v, e = unpack_factor(buf, off)
            if v <= last:
                raise FormatError("factors not strictly ascending", off)
            if e == 0:
                raise FormatError("zero exponent", off + 4)
            factors.append((v, e))
            last = v
            off += _FACTOR.size
        m = tuple(factors)
        key = grlex_key(m)
        if prev_key is not None and not key < prev_key:
            raise FormatError("terms not in strictly descending grlex order", term_off)
        prev_key = key
        terms[m] = -mag if sign else mag
    if off != n:
        raise FormatError("trailing bytes", off)
    return Polynomial._wrap(terms)


def content_hash(p: Polynomial) -> str:
    """sha256 of the canonical binary form."""
    return hashlib.sha256(serialize(p)).hexdigest()


# -- text format -----------------------------------------------------------


def to_text(p: Polynomial, size: int) -> str:
    """One term per line, variables shown as tensor components ``T[a][b][c]``."""
    s2 = size * size
    lines = [f"# size={size} terms={len(p._terms)}"]
    for m, c in p.sorted_terms():
        factors = []
        for v, e in m:
            if v >= s2 * size:
                raise ValueError(f"variable {v} out of range for size {size}")
            name = f"T[{v // s2}][{(v // size) % size}][{v % size}]"
            factors.append(name + (f"^{e}" if e > 1 else ""))
        lines.append(" * ".join([f"{c:+d}"] + factors))
    return "\n".join(lines) + "\n"


_HEADER_RE = re.compile(r"#\s*size=(\d+)\s+terms=(\d+)\s*$")
_FACTOR_RE = re.compile(r"T\[(\d+)\]\[(\d+)\]\[(\d+)\](?:\^(\d+))?$")


def from_text(text: str) -> tuple[Polynomial, int]:
    """Parse :func:`to_text` output; returns ``(polynomial, size)``."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty polynomial text")
    head = _HEADER_RE.match(lines[0])
    if not head:
        raise ValueError(f"bad header line: {lines[0]!r}")
    size, count = int(head.group(1)), int(head.group(2))
    terms: dict[Monomial, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = [t.strip() for t in line.split("*")]
        try:
            coeff = int(tokens[0])
        except ValueError:
            raise ValueError(f"line {lineno}: bad coefficient {tokens[0]!r}") from None
        ids = []
        for tok in tokens[1:]:
            fm = _FACTOR_RE.match(tok)
            if not fm:
                raise ValueError(f"line {lineno}: bad factor {tok!r}")
            a, b, c = (int(fm.group(i)) for i in (1, 2, 3))
            if max(a, b, c) >= size:
                raise ValueError(f"line {lineno}: index out of range for size {size}")
            ids.extend([a * size * size + b * size + c] * int(fm.group(4) or 1))
        m = monomial_from_ids(ids)
        if m in terms:
            raise ValueError(f"line {lineno}: duplicate monomial")
        terms[m] = coeff
    if len(terms) != count:
        raise ValueError(f"header announces {count} terms, found {len(terms)}")
    return Polynomial(terms), size


# -- generators ------------------------------------------------------------


def random_polynomial(num_terms: int, num_vars: int, max_exp: int, seed,
                      var_offset: int = 0, max_factors: int = 4) -> Polynomial:
    """Seeded random polynomial with at most ``num_terms`` terms.

    Variables are drawn from ``[var_offset, var_offset + num_vars)``; term ``i``
    always contains variable ``var_offset + i % num_vars`` so that every
    variable of the window appears once ``num_terms >= num_vars``.
    """
    if num_terms <= 0 or num_vars <= 0 or max_exp <= 0:
        raise ValueError("num_terms, num_vars and max_exp must be positive")
    rng = random.Random(seed)
    window = range(var_offset, var_offset + num_vars)
    terms: dict[Monomial, int] = {}
    for i in range(num_terms):
        lead = var_offset + i % num_vars
        k = rng.randint(1, min(num_vars, max_factors))
        others = rng.sample([v for v in window if v != lead], k - 1)
        factors = sorted([lead] + others)
        m = tuple((v, rng.randint(1, max_exp)) for v in factors)
        c = rng.choice([-1, 1]) * rng.randint(1, 1000)
        s = terms.get(m, 0) + c
        if s:
            terms[m] = s
        else:
            terms.pop(m, None)
    return Polynomial._wrap(terms)


def random_polynomial_pair(num_terms: int, num_vars: int, max_exp: int, seed
                           ) -> tuple[Polynomial, Polynomial]:
    """Two polynomials whose variable windows overlap in ceil(num_vars/2) ids."""
    p = random_polynomial(num_terms, num_vars, max_exp, f"{seed}/0")
    q = random_polynomial(num_terms, num_vars, max_exp, f"{seed}/1", var_offset=num_vars // 2)
    return p, q
