"""Dense 3-mode labeled tensors and the multilinear kernels behind CP-ALS.

Layout is fixed repo-wide: values are stored row-major with the first axis
slowest and the third fastest, i.e. a C-contiguous float64 array of shape
(I, J, K). Mode-n unfolding follows the convention where the remaining axes
index the columns with the earlier axis varying fastest:

    mode 1: rows i, column = j + k*J
    mode 2: rows j, column = i + k*I
    mode 3: rows k, column = i + j*I

``_UNFOLD_PERM`` below is the single source of truth for that convention;
``unfold``, ``fold`` and the mttkrp kernels all derive from it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend

AxisLabels = tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]

# axis permutation applied before a C-order reshape, per mode
_UNFOLD_PERM = {1: (0, 2, 1), 2: (1, 2, 0), 3: (2, 1, 0)}


def default_labels(dims: tuple[int, int, int]) -> AxisLabels:
    """Numeric stand-in labels for tensors without real axis metadata."""
    return tuple(tuple(str(i) for i in range(n)) for n in dims)  # type: ignore[return-value]


@dataclass(frozen=True)
class Tensor3:
    """Immutable dense 3-mode tensor with one label per index of each axis."""

    data: np.ndarray
    axis_labels: AxisLabels

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"Tensor3 data must be 3-dimensional, got ndim={arr.ndim}")
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"Tensor3 dims must be positive, got {arr.shape}")
        labels = tuple(tuple(str(x) for x in axis) for axis in self.axis_labels)
        if len(labels) != 3:
            raise ValueError("axis_labels must hold exactly three label lists")
        for ax, (n, lab) in enumerate(zip(arr.shape, labels)):
            if len(lab) != n:
                raise ValueError(
                    f"axis {ax} has {n} indices but {len(lab)} labels"
                )
            if any("\n" in s or "\r" in s for s in lab):
                raise ValueError("labels must not contain newlines")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "axis_labels", labels)

    @classmethod
    def from_array(cls, data: np.ndarray, axis_labels: AxisLabels | None = None) -> "Tensor3":
        arr = np.asarray(data, dtype=np.float64)
        if axis_labels is None:
            axis_labels = default_labels(arr.shape)  # type: ignore[arg-type]
        return cls(arr, axis_labels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


def _as_array(t: "Tensor3 | np.ndarray") -> np.ndarray:
    return t.data if isinstance(t, Tensor3) else np.asarray(t, dtype=np.float64)


def unfold(t: Tensor3 | np.ndarray, mode: int) -> np.ndarray:
    """Mode-n matricization of a 3-mode tensor."""
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    x = _as_array(t)
    perm = _UNFOLD_PERM[mode]
    rows = x.shape[mode - 1]
    return np.ascontiguousarray(x.transpose(perm)).reshape(rows, -1)


def fold(mat: np.ndarray, mode: int, dims: tuple[int, int, int],
         axis_labels: AxisLabels | None = None) -> Tensor3:
    """Inverse of :func:`unfold`: rebuild the tensor from its matricization."""
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    mat = np.asarray(mat, dtype=np.float64)
    perm = _UNFOLD_PERM[mode]
    shape_permuted = tuple(dims[p] for p in perm)
    if mat.shape != (dims[mode - 1], shape_permuted[1] * shape_permuted[2]):
        raise ValueError(
            f"matrix shape {mat.shape} does not match mode-{mode} unfolding of dims {dims}"
        )
    inverse = tuple(perm.index(ax) for ax in range(3))
    data = mat.reshape(shape_permuted).transpose(inverse)
    if axis_labels is None:
        axis_labels = default_labels(dims)
    return Tensor3(data, axis_labels)


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Columnwise Kronecker product; column r is kron(a[:, r], b[:, r])."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"column counts differ: {a.shape[1]} vs {b.shape[1]}"
        )
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def _check_factor(name: str, f: np.ndarray, rows: int, rank: int | None) -> np.ndarray:
    f = np.ascontiguousarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    if f.shape[0] != rows:
        raise ValueError(f"{name} has {f.shape[0]} rows, expected {rows}")
    if rank is not None and f.shape[1] != rank:
        raise ValueError(f"{name} has {f.shape[1]} columns, expected {rank}")
    return f


def mttkrp(t: Tensor3 | np.ndarray, f1: np.ndarray, f2: np.ndarray, mode: int) -> np.ndarray:
    """Matricized-tensor times Khatri-Rao product for the target mode.

    ``f1`` and ``f2`` are the factor matrices of the two non-target modes in
    ascending mode order. Equivalent to ``unfold(t, mode) @ khatri_rao(f2, f1)``
    but computed without materializing the Khatri-Rao product.
    """
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    x = _as_array(t)
    others = [d for m, d in enumerate(x.shape, start=1) if m != mode]
    f1 = _check_factor("f1", f1, others[0], None)
    f2 = _check_factor("f2", f2, others[1], f1.shape[1])
    return backend.mttkrp_kernel(x, f1, f2, mode)


def mttkrp_reference(t: Tensor3 | np.ndarray, f1: np.ndarray, f2: np.ndarray, mode: int) -> np.ndarray:
    """Explicit unfold @ khatri_rao path; the slow oracle mttkrp must match."""
    return unfold(t, mode) @ khatri_rao(f2, f1)


def cp_compose(weights: np.ndarray, factors: tuple[np.ndarray, np.ndarray, np.ndarray],
               axis_labels: AxisLabels | None = None) -> Tensor3:
    """Tensor equal to sum_r weights[r] * a_r (outer) b_r (outer) c_r."""
    a, b, c = factors
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    rank = weights.shape[0]
    a = _check_factor("A", a, a.shape[0], rank)
    b = _check_factor("B", b, b.shape[0], rank)
    c = _check_factor("C", c, c.shape[0], rank)
    data = backend.cp_compose_kernel(weights, a, b, c)
    if axis_labels is None:
        axis_labels = default_labels(data.shape)
    return Tensor3(data, axis_labels)


def frob_norm(t: Tensor3 | np.ndarray) -> float:
    """Frobenius norm: square root of the sum of squared entries."""
    return float(np.linalg.norm(_as_array(t).ravel()))


# ---------------------------------------------------------------------------
# plain-text serialization
#
# Grammar (documented in README.md):
#   line 1: "tensor3 v1"
#   line 2: "dims I J K"
#   next I+J+K lines: axis labels, axis 1 first, one label per line, verbatim
#   remaining lines: I*J*K whitespace-separated float values in the fixed
#   layout (axis 1 slowest, axis 3 fastest); line wrapping is insignificant
# ---------------------------------------------------------------------------

_MAGIC = "tensor3 v1"
_VALUES_PER_LINE = 8


def save_tensor(t: Tensor3, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_MAGIC + "\n")
        fh.write("dims %d %d %d\n" % t.dims)
        for axis in t.axis_labels:
            for label in axis:
                fh.write(label + "\n")
        flat = t.data.ravel()
        for start in range(0, flat.size, _VALUES_PER_LINE):
            chunk = flat[start : start + _VALUES_PER_LINE]
            fh.write(" ".join(repr(float(v)) for v in chunk) + "\n")


def load_tensor(path) -> Tensor3:
    with open(path, "r", encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != _MAGIC:
            raise ValueError(f"not a tensor3 file: bad header {magic!r}")
        dims_line = fh.readline().split()
        if len(dims_line) != 4 or dims_line[0] != "dims":
            raise ValueError("malformed dims line")
        dims = tuple(int(v) for v in dims_line[1:])
        labels = []
        for n in dims:
            axis = []
            for _ in range(n):
                line = fh.readline()
                if line == "":
                    raise ValueError("unexpected end of file in label block")
                axis.append(line.rstrip("\n"))
            labels.append(tuple(axis))
        values = fh.read().split()
    expected = dims[0] * dims[1] * dims[2]
    if len(values) != expected:
        raise ValueError(f"expected {expected} values, found {len(values)}")
    data = np.array([float(v) for v in values]).reshape(dims)
    return Tensor3(data, tuple(labels))  # type: ignore[arg-type]
