"""Per-vertex scalar fields bound to a surface."""

from __future__ import annotations

import numbers

import numpy as np

from ..errors import SurfaceMismatchError, PreconditionError

__all__ = ["ScalarField", "field_values"]


def field_values(surface, x, name="field"):
    """Return the vertex values of ``x`` as a float array on ``surface``.

    ``x`` may be a ScalarField (which must live on ``surface``), an array of
    length ``n_vertices`` or a real scalar, read as a constant field.
    """
    if isinstance(x, ScalarField):
        if x.surface is not surface:
            raise SurfaceMismatchError("%s lives on a different surface" % name)
        return x.values
    if isinstance(x, numbers.Real):
        return np.full(surface.n_vertices, float(x))
    arr = np.asarray(x, dtype=float)
    if arr.shape != (surface.n_vertices,):
        raise PreconditionError(
            "%s has shape %s, expected (%d,)" % (name, arr.shape, surface.n_vertices))
    return arr


class ScalarField:
    """Values at the vertices of a HyperbolicSurface.

    Arithmetic with another field requires the same surface object; plain
    numbers and arrays broadcast.  ``mean`` is the area-weighted average,
    ``l2`` the weighted L2 norm, ``sup`` the maximum value.
    """

    __slots__ = ("surface", "values")
    __array_priority__ = 100

    def __init__(self, surface, values):
        self.surface = surface
        self.values = field_values(surface, values)

    def _coerce(self, other):
        if isinstance(other, ScalarField):
            if other.surface is not self.surface:
                raise SurfaceMismatchError("arithmetic between fields on different surfaces")
            return other.values
        return other

    def _new(self, values):
        return ScalarField(self.surface, values)

    def __add__(self, other):
        return self._new(self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._new(self.values - self._coerce(other))

    def __rsub__(self, other):
        return self._new(self._coerce(other) - self.values)

    def __mul__(self, other):
        return self._new(self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._new(self.values / self._coerce(other))

    def __neg__(self):
        return self._new(-self.values)

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def exp(self):
        return self._new(np.exp(self.values))

    def scale(self, c):
        return self._new(float(c) * self.values)

    def mean(self):
        return self.surface.mean(self.values)

    def sup(self):
        return float(self.values.max())

    def inf(self):
        return float(self.values.min())

    def sup_abs(self):
        return float(np.abs(self.values).max())

    def l2(self):
        return self.surface.l2(self.values)

    def laplacian(self):
        return self._new(self.surface.laplacian(self.values))

    def __repr__(self):
        return "ScalarField(n=%d, min=%.6g, max=%.6g)" % (len(self.values), self.values.min(), self.values.max())
