"""The rank-3 complete-graph symplectic invariant T^4.

Tensor component ``T[a][b][c]`` of a size-``S`` tensor is the formal variable
with id ``a*S*S + b*S + c``.  Indices are 0-based; the symplectic form ``J``
has its ``+1`` block at ``(i, i + N)`` with ``N = S // 2``.
"""

from __future__ import annotations

import itertools
import random
import time
from dataclasses import dataclass, field
from typing import Sequence

from .polyarith import Polynomial

IndexTriple = tuple[int, int, int]

# Order of the accumulators in the symmetry-reduced kernel.  Entries with a
# +1 sign enter the final sum positively, the rest negatively.
ACCUMULATOR_SIGNS = {
    "TE": 1, "T12": 1, "T13": 1, "T14": 1, "T16": 1, "T23": 1, "T24": 1, "T26": 1,
    "T1": -1, "T2": -1, "T3": -1, "T4": -1, "T5": -1, "T123": -1, "T126": -1, "T134": -1,
}
SYMMETRY_FACTOR = 4


def half_size(size: int) -> int:
    """Validate a tensor edge size and return ``N = size // 2``."""
    if not isinstance(size, int) or isinstance(size, bool):
        raise TypeError(f"size must be an int, got {type(size).__name__}")
    if size < 2 or size % 2:
        raise ValueError(f"tensor size must be even and >= 2, got {size}")
    return size // 2


def var_id(a: int, b: int, c: int, size: int) -> int:
    return (a * size + b) * size + c


def var_indices(v: int, size: int) -> IndexTriple:
    return v // (size * size), (v // size) % size, v % size


def j_entry(i: int, j: int, size: int) -> int:
    n = half_size(size)
    if not (0 <= i < size and 0 <= j < size):
        raise IndexError(f"J index ({i}, {j}) out of range for size {size}")
    if j == i + n:
        return 1
    if i == j + n:
        return -1
    return 0


def j_matrix(size: int) -> list[list[int]]:
    return [[j_entry(i, j, size) for j in range(size)] for i in range(size)]


@dataclass
class InvariantResult:
    poly: Polynomial
    size: int
    algorithm: str
    wall_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {
            "size": self.size,
            "algorithm": self.algorithm,
            "wall_seconds": self.wall_seconds,
            "terms": self.poly.num_terms(),
            "is_zero": self.poly.is_zero(),
            **self.extra,
        }


def _accumulate(acc: dict, key: tuple, coeff: int) -> None:
    s = acc.get(key, 0) + coeff
    if s:
        acc[key] = s
    else:
        del acc[key]


def invariant_naive(size: int, prune: bool = True, listed_orientation: bool = False
                    ) -> InvariantResult:
    """Twelve-loop contraction of four symbolic tensors through six J factors.

    Loop nesting follows the textbook ``a, b, c, d`` ordering.  Tensors are
    ``A = T[a1][a2][a3]`` etc. and the contraction is

        J[a1][b1] J[a2][c2] J[c3][b3] J[d1][c1] J[d2][b2] J[a3][d3] * A B C D

    which is the complete-graph pattern ``T_{a1 a2 a3} T_{a4 a5 ~a3}
    T_{~a4 ~a2 a6} T_{~a1 ~a5 ~a6}`` with B, C, D playing the roles of the
    fourth, third and second tensor.  ``listed_orientation=True`` uses
    ``J[b3][c3] J[c1][d1] J[b2][d2]`` instead; because J is antisymmetric this
    yields exactly the negated polynomial.

    With ``prune`` set, any branch whose J factor vanishes is skipped, which
    brings the work from ``S**12`` down to ``S**6`` without changing the sum.
    """
    half_size(size)
    t0 = time.perf_counter()
    J = j_matrix(size)
    JT = [list(row) for row in zip(*J)]
    # J_bc[x][y] is the factor for the pair (x from B or C side, y from the other)
    J_bc = J if listed_orientation else JT
    R = range(size)
    T = [[[var_id(a, b, c, size) for c in R] for b in R] for a in R]
    acc: dict[tuple[int, ...], int] = {}

    def nz(row):
        return [(k, v) for k, v in enumerate(row) if v] if prune else list(enumerate(row))

    for a1, a2, a3 in itertools.product(R, R, R):
        A = T[a1][a2][a3]
        for b1, jab in nz(J[a1]):
            for b2, b3 in itertools.product(R, R):
                B = T[b1][b2][b3]
                for c2, jac in nz(J[a2]):
                    for c1 in R:
                        for c3, jbc in nz(J_bc[b3]):
                            C = T[c1][c2][c3]
                            # J[d1][c1] as a function of d1 is column c1 of J
                            for d1, jcd in nz(JT[c1] if not listed_orientation else J[c1]):
                                for d2, jbd in nz(JT[b2] if not listed_orientation else J[b2]):
                                    for d3, jad in nz(J[a3]):
                                        w = jab * jac * jbc * jcd * jbd * jad
                                        if w:
                                            key = tuple(sorted((A, B, C, T[d1][d2][d3])))
                                            _accumulate(acc, key, w)
    poly = Polynomial.from_id_counts(acc)
    return InvariantResult(poly, size, "naive", time.perf_counter() - t0)


def all_triples(size: int) -> list[IndexTriple]:
    """Outer-loop triples ``(a4, a2, a6)`` in lexicographic order."""
    n = half_size(size)
    return list(itertools.product(range(n), repeat=3))


def triple_at(index: int, size: int) -> IndexTriple:
    n = half_size(size)
    return index // (n * n), (index // n) % n, index % n


def _kernel(size: int, triples: Sequence[IndexTriple]) -> dict[str, dict]:
    """Run the three inner loops for each outer triple into named accumulators."""
    n = half_size(size)
    R = range(size)
    T = [[[var_id(a, b, c, size) for c in R] for b in R] for a in R]
    acc = {name: {} for name in ACCUMULATOR_SIGNS}
    TE, T1, T2, T3, T4, T5 = (acc[k] for k in ("TE", "T1", "T2", "T3", "T4", "T5"))
    T12, T13, T14, T16 = (acc[k] for k in ("T12", "T13", "T14", "T16"))
    T23, T24, T26 = (acc[k] for k in ("T23", "T24", "T26"))
    T123, T126, T134 = (acc[k] for k in ("T123", "T126", "T134"))

    def bump(d, *ids):
        key = tuple(sorted(ids))
        d[key] = d.get(key, 0) + 1

    for a4, a2, a6 in triples:
        if not (0 <= a4 < n and 0 <= a2 < n and 0 <= a6 < n):
            raise ValueError(f"triple {(a4, a2, a6)} out of range for size {size}")
        A4, A2, A6 = a4 + n, a2 + n, a6 + n
        W1 = T[a4][a2][a6]
        W2 = T[a4][A2][a6]
        W3 = T[a4][a2][A6]
        W4 = T[A4][A2][a6]
        W5 = T[a4][A2][A6]
        W6 = T[A4][a2][A6]
        W7 = T[A4][A2][A6]
        for a1 in range(n):
            A1 = a1 + n
            for a5 in range(n):
                A5 = a5 + n
                Z1 = T[a1][a5][a6]
                Z2 = T[A1][a5][a6]
                Z6 = T[A1][a5][A6]
                t5 = (W3, T[a1][A5][a6])
                tE = (W4, T[A1][A5][A6])
                t1 = (W3, Z2)
                t13 = t1
                t2 = (W5, Z1)
                t23 = t2
                t3 = (W3, Z1)
                t4 = (W6, Z1)
                t12 = (W5, Z2)
                t14 = (W6, Z2)
                t134 = t14
                t16 = (W1, Z6)
                t24 = (W7, Z1)
                t26 = (W2, T[a1][a5][A6])
                t123 = (W5, Z2)
                t126 = (W2, Z6)
                for a3 in range(n):
                    A3 = a3 + n
                    bump(TE, *tE, T[a1][a2][a3], T[a4][a5][A3])
                    bump(T5, *t5, T[A1][A2][A3], T[A4][a5][a3])
                    X7Y5 = (T[a1][A2][A3], T[A4][A5][a3])
                    bump(T1, *t1, *X7Y5)
                    bump(T16, *t16, *X7Y5)
                    bump(T2, *t2, T[A1][a2][A3], T[A4][A5][a3])
                    bump(T3, *t3, T[A1][A2][a3], T[A4][A5][A3])
                    bump(T4, *t4, T[A1][A2][A3], T[a4][A5][a3])
                    bump(T12, *t12, T[a1][a2][A3], T[A4][A5][a3])
                    bump(T13, *t13, T[a1][A2][a3], T[A4][A5][A3])
                    bump(T14, *t14, T[a1][A2][A3], T[a4][A5][a3])
                    bump(T23, *t23, T[A1][a2][a3], T[A4][A5][A3])
                    bump(T24, *t24, T[A1][a2][A3], T[a4][A5][a3])
                    bump(T26, *t26, T[A1][a2][A3], T[A4][A5][a3])
                    bump(T123, *t123, T[a1][a2][a3], T[A4][A5][A3])
                    bump(T126, *t126, T[a1][a2][A3], T[A4][A5][a3])
                    bump(T134, *t134, T[a1][A2][a3], T[a4][A5][A3])
    return acc


def _combine(acc: dict[str, dict], negate: str | None = None) -> Polynomial:
    total: dict[tuple[int, ...], int] = {}
    get = total.get
    for name, sign in ACCUMULATOR_SIGNS.items():
        if name == negate:
            sign = -sign
        for key, c in acc[name].items():
            total[key] = get(key, 0) + sign * c
    return Polynomial.from_id_counts(
        {k: SYMMETRY_FACTOR * c for k, c in total.items() if c})


def inner_block(size: int, triples: Sequence[IndexTriple],
                negate_accumulator: str | None = None) -> Polynomial:
    """Contribution of the given outer triples to T^4, signs and factor 4 applied.

    Summing over any partition of :func:`all_triples` gives the full invariant.
    ``negate_accumulator`` flips the sign of one accumulator; it exists only to
    demonstrate that verification catches a corrupted kernel.
    """
    if negate_accumulator is not None and negate_accumulator not in ACCUMULATOR_SIGNS:
        raise ValueError(f"unknown accumulator {negate_accumulator!r}")
    if not triples:
        return Polynomial()
    return _combine(_kernel(size, triples), negate_accumulator)


def invariant_optimized(size: int, negate_accumulator: str | None = None) -> InvariantResult:
    t0 = time.perf_counter()
    poly = inner_block(size, all_triples(size), negate_accumulator)
    return InvariantResult(poly, size, "optimized", time.perf_counter() - t0)


def compute_invariant(size: int, algorithm: str = "optimized") -> InvariantResult:
    if algorithm == "naive":
        return invariant_naive(size)
    if algorithm == "optimized":
        return invariant_optimized(size)
    raise ValueError(f"unknown algorithm {algorithm!r}")


# -- numeric specialization ------------------------------------------------


@dataclass
class NumericTensor:
    """Integer tensor stored flat in variable-id order."""

    size: int
    values: list[int]

    def __post_init__(self):
        half_size(self.size)
        if len(self.values) != self.size ** 3:
            raise ValueError(f"expected {self.size ** 3} values, got {len(self.values)}")

    def __getitem__(self, idx: IndexTriple) -> int:
        a, b, c = idx
        return self.values[var_id(a, b, c, self.size)]

    def scaled(self, c: int) -> "NumericTensor":
        return NumericTensor(self.size, [c * v for v in self.values])

    @classmethod
    def random(cls, size: int, seed, lo: int = -9, hi: int = 9) -> "NumericTensor":
        rng = random.Random(seed)
        return cls(size, [rng.randint(lo, hi) for _ in range(size ** 3)])


def numeric_evaluate(p: Polynomial, t: NumericTensor) -> int:
    vals = t.values
    nvars = len(vals)
    total = 0
    for m, c in p:
        term = c
        for v, e in m:
            if v >= nvars:
                raise IndexError(f"variable {v} out of range for size {t.size}")
            term *= vals[v] ** e if e > 1 else vals[v]
        total += term
    return total


def _matmul(A, B):
    Bt = list(zip(*B))
    return [[sum(x * y for x, y in zip(row, col)) for col in Bt] for row in A]


def _transpose(A):
    return [list(r) for r in zip(*A)]


def verify_symplectic(K, size: int) -> bool:
    """Exact check of ``K J K^T = J`` and ``K^T J K = J``."""
    if len(K) != size or any(len(row) != size for row in K):
        return False
    J = j_matrix(size)
    Kt = _transpose(K)
    return _matmul(_matmul(K, J), Kt) == J and _matmul(_matmul(Kt, J), K) == J


def identity(size: int) -> list[list[int]]:
    return [[int(i == j) for j in range(size)] for i in range(size)]


def make_test_symplectic(size: int, seed) -> list[list[int]]:
    """Seeded integer symplectic matrix: a product of at most 8 generators.

    Generators are ``diag(A, A^-T)`` with ``A = I + s*E_ij`` (block-unimodular)
    and the upper/lower shears ``[[I, B], [0, I]]``, ``[[I, 0], [B, I]]`` with
    ``B`` symmetric.
    """
    n = half_size(size)
    rng = random.Random(seed)
    K = identity(size)
    for _ in range(rng.randint(1, 8)):
        G = identity(size)
        kind = rng.choice(("unimodular", "upper", "lower")) if n > 1 else rng.choice(("upper", "lower"))
        s = rng.choice((-1, 1))
        if kind == "unimodular":
            i, j = rng.sample(range(n), 2)
            G[i][j] = s            # A = I + s E_ij
            G[n + j][n + i] = -s   # A^-T = I - s E_ji
        else:
            i, j = rng.randrange(n), rng.randrange(n)
            off_r, off_c = (0, n) if kind == "upper" else (n, 0)
            G[off_r + i][off_c + j] += s
            if i != j:
                G[off_r + j][off_c + i] += s
        K = _matmul(G, K)
    assert verify_symplectic(K, size)
    return K


def symplectic_transform(t: NumericTensor, K) -> NumericTensor:
    """Apply the same matrix ``K`` to all three tensor slots."""
    S = t.size
    if not verify_symplectic(K, S):
        raise ValueError("transform matrix is not symplectic")
    R = range(S)
    cur = [[[t[a, b, c] for c in R] for b in R] for a in R]
    # contract one slot at a time: slot 1, then 2, then 3
    nxt = [[[sum(K[q][p] * cur[p][b][c] for p in R) for c in R] for b in R] for q in R]
    cur = nxt
    nxt = [[[sum(K[q][p] * cur[a][p][c] for p in R) for c in R] for q in R] for a in R]
    cur = nxt
    nxt = [[[sum(K[q][p] * cur[a][b][p] for p in R) for q in R] for b in R] for a in R]
    flat = [nxt[a][b][c] for a in R for b in R for c in R]
    return NumericTensor(S, flat)
