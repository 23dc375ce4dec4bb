"""Dense tensor and factor-matrix primitives.

Layout convention used everywhere in this package: an N-way tensor is a
flat float64 array with the mode-1 index varying fastest, i.e. entry
(i_1, ..., i_N) lives at offset i_1 + I_1*i_2 + I_1*I_2*i_3 + ... (0-based).
This generalizes column-major matrix storage, so the matricization that maps
modes 1..S to rows and S+1..N to columns is a zero-copy reinterpretation of
the flat array as a column-major matrix.

Factor matrices are plain (I_n, R) float64 ndarrays.  Khatri-Rao products
take their argument list in ascending mode order and linearize output rows
with the *first* list element's index varying fastest, which makes KRP rows
line up with matricization columns without any permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DenseTensor:
    """Dense N-way tensor over a flat mode-1-fastest float64 buffer."""

    __slots__ = ("dims", "data")

    def __init__(self, dims, data=None):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2:
            raise ValueError("tensor order must be at least 2")
        if any(d < 1 for d in dims):
            raise ValueError(f"dims must be positive, got {dims}")
        size = int(np.prod(dims))
        if data is None:
            data = np.zeros(size)
        else:
            data = np.ascontiguousarray(data, dtype=np.float64).ravel()
            if data.size != size:
                raise ValueError(
                    f"data length {data.size} does not match prod(dims) {size}"
                )
        self.dims = dims
        self.data = data

    @classmethod
    def from_array(cls, arr):
        """Build from an ndarray indexed as arr[i_1, ..., i_N]."""
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape, arr.ravel(order="F"))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return self.data.size

    def as_array(self) -> np.ndarray:
        """Zero-copy N-d view, indexed as a[i_1, ..., i_N]."""
        return self.data.reshape(self.dims, order="F")

    def unfold_leading(self, split: int) -> np.ndarray:
        """Zero-copy matricization with modes 1..split as rows.

        Returns a column-major view of shape
        (prod(dims[:split]), prod(dims[split:])).
        """
        if not 1 <= split < self.order:
            raise ValueError(f"split must be in [1, {self.order - 1}], got {split}")
        rows = int(np.prod(self.dims[:split]))
        cols = int(np.prod(self.dims[split:]))
        return self.data.reshape((rows, cols), order="F")

    def norm_squared(self) -> float:
        """Sum of squares of all entries."""
        return float(np.dot(self.data, self.data))


@dataclass
class FactorSet:
    """N factor matrices sharing rank R plus the column-weight vector lambda.

    ``factors[n]`` has shape (I_{n+1}, R).  ``lam`` defaults to all ones.
    When the set is normalized, every factor column has unit 2-norm (or is
    identically zero with a zero weight) and ``lam`` carries the scale.
    """

    factors: list
    lam: np.ndarray = None

    def __post_init__(self):
        self.factors = [np.asarray(h, dtype=np.float64) for h in self.factors]
        ranks = {h.shape[1] for h in self.factors}
        if len(ranks) != 1:
            raise ValueError(f"factors disagree on rank: {sorted(ranks)}")
        if self.lam is None:
            self.lam = np.ones(self.rank)
        else:
            self.lam = np.asarray(self.lam, dtype=np.float64)
            if self.lam.shape != (self.rank,):
                raise ValueError("lambda length must equal the rank")

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self):
        return tuple(h.shape[0] for h in self.factors)

    def copy(self) -> "FactorSet":
        return FactorSet([h.copy() for h in self.factors], self.lam.copy())


def khatri_rao(factors) -> np.ndarray:
    """Khatri-Rao product of a list of (I_j, R) matrices.

    Output row (i_1, ..., i_m) = elementwise product of the j-th factor's
    row i_j, with the FIRST list element's index varying fastest:
    row offset = i_1 + I_1*i_2 + I_1*I_2*i_3 + ...
    """
    if len(factors) == 0:
        raise ValueError("khatri_rao needs at least one factor")
    ranks = {h.shape[1] for h in factors}
    if len(ranks) != 1:
        raise ValueError(f"khatri_rao rank mismatch: {sorted(ranks)}")
    out = factors[0]
    for h in factors[1:]:
        # (J,R) joining (K,R) -> (J*K,R) with the existing K index fastest
        out = (h[:, None, :] * out[None, :, :]).reshape(-1, out.shape[1])
    return out


def gram(h: np.ndarray) -> np.ndarray:
    """H^T H, forced exactly symmetric."""
    g = h.T @ h
    return 0.5 * (g + g.T)


def hadamard_grams_excluding(grams, exclude: int) -> np.ndarray:
    """Elementwise product of all Gram matrices except index ``exclude``."""
    if not 0 <= exclude < len(grams):
        raise ValueError(f"exclude index {exclude} out of range")
    rank = grams[0].shape[0]
    out = np.ones((rank, rank))
    for m, g in enumerate(grams):
        if m != exclude:
            out *= g
    return out


def naive_mttkrp(x: DenseTensor, factors, mode: int) -> np.ndarray:
    """MTTKRP in ``mode`` by direct summation over all other indices.

    M(i, r) = sum over i_1..i_N (i_mode = i) of X(i_1..i_N) * prod of the
    other factors' (i_m, r) entries.  Implemented as a single einsum over
    the dense array; independent of both the matricization-based and
    dimension-tree code paths, so it serves as their oracle.
    """
    hs = list(factors.factors) if isinstance(factors, FactorSet) else list(factors)
    n = x.order
    if len(hs) != n:
        raise ValueError("factor count does not match tensor order")
    for m, h in enumerate(hs):
        if m != mode and h.shape[0] != x.dims[m]:
            raise ValueError(
                f"factor {m} has {h.shape[0]} rows, tensor dim is {x.dims[m]}"
            )
    letters = "abcdefghijklm"
    if n > len(letters):
        raise ValueError("tensor order too large for naive path")
    terms = [letters[:n]]
    operands = [x.as_array()]
    for m in range(n):
        if m != mode:
            terms.append(letters[m] + "r")
            operands.append(hs[m])
    expr = ",".join(terms) + "->" + letters[mode] + "r"
    return np.einsum(expr, *operands, optimize=True)


def norm_squared(x: DenseTensor) -> float:
    return x.norm_squared()


def reconstruct(model: FactorSet) -> DenseTensor:
    """Dense tensor of the model: entry = sum_r lam_r * prod_n H_n(i_n, r)."""
    krp = khatri_rao(model.factors)
    return DenseTensor(model.dims, krp @ model.lam)


def normalize_columns(h: np.ndarray):
    """Scale each column to unit 2-norm; return (matrix, original norms).

    Zero columns are left untouched and get weight 0.
    """
    norms = np.linalg.norm(h, axis=0)
    scale = np.where(norms > 0.0, norms, 1.0)
    return h / scale, norms


def matrix_inner_product(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product sum_ij A(i,j) B(i,j)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))
