"""Dense float64 tensors and the error types shared across the package."""

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible with a primitive's rule."""


class NonFiniteValueError(ArithmeticError):
    """A NaN or infinity appeared where only finite values are allowed."""


class GraphStateError(RuntimeError):
    """A graph operation was called out of order (e.g. backward before forward)."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed, truncated, or inconsistent."""


class Tensor:
    """A dense n-dimensional array of 64-bit floats, finite by construction.

    Wraps a C-contiguous float64 ndarray. The row-major flat data always has
    exactly prod(shape) entries, and construction rejects NaN/Inf.
    """

    __slots__ = ("data",)

    def __init__(self, data, shape=None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if shape is not None:
            arr = arr.reshape(shape)
        if not np.isfinite(arr).all():
            raise NonFiniteValueError("tensor holds non-finite values")
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def copy(self):
        return Tensor(self.data.copy())

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    def __hash__(self):  # tensors are mutable through .data; identity hash
        return id(self)


def as_array(x):
    """Coerce a Tensor or array-like to a float64 ndarray."""
    if isinstance(x, Tensor):
        return x.data
    return np.ascontiguousarray(x, dtype=np.float64)
