"""Nested Lie derivatives, numerically or from analytic tables.

For constant parity vectors the conditions only need the vector-valued
derivatives ``L_{F_e}^k H_e`` and ``L_{E_i} L_{F_e}^k H_e``; since Lie
derivatives are linear, ``L^k(v H_e) = v . L^k(H_e)``.  The engine returns
those tables together with an error estimate per entry.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError, UnsupportedOrder
from .numerics import EPS
from .plant import ExtendedSystem, extended_matrices


class LinearLieTable:
    """Exact derivative tables for a lifted linear plant."""

    def __init__(self, plant, exo):
        self.Fe, self.He = extended_matrices(plant, exo)
        self.n = plant.n
        self.E = plant.E

    def output_derivatives(self, X, k_max):
        rows, M = [], self.He
        for _ in range(k_max + 1):
            rows.append(M @ X)
            M = M @ self.Fe
        return np.array(rows)

    def disturbance_derivatives(self, i, X, k_max):
        Ee = np.concatenate([self.E[:, i], np.zeros(self.Fe.shape[0] - self.n)])
        rows, M = [], self.He
        for _ in range(k_max + 1):
            rows.append(M @ Ee)
            M = M @ self.Fe
        return np.array(rows)


class LieEngine:
    """Evaluates nested Lie derivatives.

    Parameters
    ----------
    max_order : int
        Largest nesting depth accepted in numeric mode.  Analytic tables
        lift the cap.
    analytic : object, optional
        Provides ``output_derivatives(X, k_max)`` and
        ``disturbance_derivatives(i, X, k_max)``.  When ``None`` and the
        plant is a lifted linear model, exact tables are used automatically
        unless ``mode="numeric"`` is forced.
    step_scale : sequence of float, optional
        Relative step per total nesting depth; defaults to ``eps**(1/3)``
        for depth 1 and ``eps**(1/4)`` for depth 2 and beyond.
    """

    def __init__(self, max_order: int = 2, mode: str = "auto", analytic=None, step_scale=None):
        if mode not in ("auto", "numeric", "analytic"):
            raise ValueError(f"unknown mode {mode!r}")
        self.max_order = int(max_order)
        self.mode = mode
        self.analytic = analytic
        self.step_scale = step_scale

    # -- generic numeric machinery -------------------------------------
    def _h(self, depth):
        if self.step_scale is not None:
            return self.step_scale[min(depth, len(self.step_scale)) - 1]
        return EPS ** (1.0 / 3.0) if depth <= 1 else EPS ** (1.0 / 4.0)

    def _nested(self, phi, fields, X, hrel):
        if not fields:
            val = np.asarray(phi(X), dtype=float)
            if not np.all(np.isfinite(val)):
                raise EvaluationError(f"non-finite value at X={X}")
            return val, np.abs(val)
        d = np.asarray(fields[0](X), dtype=float)
        dn = float(np.linalg.norm(d))
        if dn == 0.0:
            inner, mag = self._nested(phi, fields[1:], X, hrel)
            return np.zeros_like(inner), mag * 0.0
        h = hrel * (1.0 + float(np.linalg.norm(X))) / dn
        up, mu = self._nested(phi, fields[1:], X + h * d, hrel)
        dn_, md = self._nested(phi, fields[1:], X - h * d, hrel)
        # rounding magnitude propagated through the difference quotient
        return (up - dn_) / (2.0 * h), (np.maximum(mu, md)) / h

    def lie(self, phi: Callable, fields: Sequence[Callable], X):
        """``L_{f1} L_{f2} ... L_{fk} phi`` at ``X`` and an error estimate.

        ``fields[0]`` is the outermost derivative.  ``phi`` may return a
        scalar or a vector.
        """
        X = np.asarray(X, dtype=float)
        depth = len(fields)
        if depth > self.max_order:
            raise UnsupportedOrder(f"nesting depth {depth} exceeds max_order={self.max_order}")
        if depth == 0:
            val = np.asarray(phi(X), dtype=float)
            return val, np.zeros_like(val)
        h = self._h(depth)
        v1, mag = self._nested(phi, list(fields), X, h)
        v2, _ = self._nested(phi, list(fields), X, 2.0 * h)
        trunc = np.abs(v1 - v2) / 3.0
        rounding = 4.0 * EPS * mag
        return v1, 2.0 * trunc + rounding

    # -- tables over an extended system ----------------------------------
    def _table(self, ext: ExtendedSystem):
        if self.mode == "numeric":
            return None
        if self.analytic is not None:
            return self.analytic
        if ext.plant.lie_table is not None:
            return ext.plant.lie_table
        if ext.plant.linear is not None:
            return LinearLieTable(ext.plant.linear, ext.exo)
        if self.mode == "analytic":
            raise UnsupportedOrder("analytic mode requested but no derivative tables available")
        return None

    def check_order(self, ext: ExtendedSystem, order: int):
        if order > self.max_order and self._table(ext) is None:
            raise UnsupportedOrder(
                f"order {order} needs analytic derivatives (numeric max_order={self.max_order})")

    def output_derivatives(self, ext: ExtendedSystem, X, k_max: int):
        """Rows ``L_{F_e}^k H_e(X)`` for ``k = 0..k_max`` and their error estimates."""
        X = np.asarray(X, dtype=float)
        table = self._table(ext)
        if table is not None:
            vals = np.asarray(table.output_derivatives(X, k_max), dtype=float)
            return vals, np.zeros_like(vals)
        self.check_order(ext, k_max)
        vals, errs = [], []
        for k in range(k_max + 1):
            v, e = self.lie(ext.H_e, [ext.F_e] * k, X)
            vals.append(v)
            errs.append(e)
        return np.array(vals), np.array(errs)

    def disturbance_derivatives(self, ext: ExtendedSystem, i: int, X, k_max: int):
        """Rows ``L_{E_i} L_{F_e}^k H_e(X)`` for ``k = 0..k_max``."""
        X = np.asarray(X, dtype=float)
        table = self._table(ext)
        if table is not None:
            vals = np.asarray(table.disturbance_derivatives(i, X, k_max), dtype=float)
            return vals, np.zeros_like(vals)
        self.check_order(ext, k_max + 1)
        Ee = ext.E_e(i)
        vals, errs = [], []
        for k in range(k_max + 1):
            v, e = self.lie(ext.H_e, [Ee] + [ext.F_e] * k, X)
            vals.append(v)
            errs.append(e)
        return np.array(vals), np.array(errs)
