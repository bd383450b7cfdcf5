"""Error propagation calculus: error quantities, Dirichlet structures, image structures.

An :class:`ErrorQuantity` carries ``(value, bias, gamma)`` at a common scale and
is pushed through smooth maps either to first order (bias only) or with the
Ito-like second-order rule, where the bias picks up ``1/2 tr(Hess f . gamma)``.

A :class:`DirichletStructure` stores the coefficients of the bias operators as
point fields::

    A_bar[phi]   = z . grad phi     + 1/2 sum theta_ij phi''_ij
    A_tilde[phi] = drift . grad phi + 1/2 sum theta_ij phi''_ij
    Gamma[phi]   = grad phi^T theta grad phi
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .jet2 import Jet2, TestFunction, as_function, parse_expr
from .laws import Law, PushforwardLaw, law_from_json
from .rng import substream

PSD_RTOL = 1e-12


# --- error quantities -------------------------------------------------------


def _check_psd(gamma: np.ndarray) -> None:
    eig = np.linalg.eigvalsh(gamma)
    floor = -PSD_RTOL * max(float(np.trace(gamma)), np.finfo(float).tiny)
    if eig.size and eig.min() < floor:
        raise ValueError(f"gamma is not positive semidefinite (min eigenvalue {eig.min():.3g})")


@dataclass(frozen=True, eq=False)
class ErrorQuantity:
    """A value with its asymptotic bias vector and square-field matrix."""

    value: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        value = np.atleast_1d(np.array(self.value, dtype=float))
        d = value.shape[0]
        bias = np.atleast_1d(np.array(self.bias, dtype=float))
        gamma = np.array(self.gamma, dtype=float).reshape(d, d) if np.size(self.gamma) == d * d else None
        if value.ndim != 1 or bias.shape != (d,) or gamma is None:
            raise ValueError("value, bias and gamma must have shapes (d,), (d,), (d, d)")
        if not np.allclose(gamma, gamma.T, rtol=1e-12, atol=1e-15):
            raise ValueError("gamma must be symmetric")
        gamma = 0.5 * (gamma + gamma.T)
        _check_psd(gamma)
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        for arr in (value, bias, gamma):
            arr.setflags(write=False)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dimension(self) -> int:
        return self.value.shape[0]

    @classmethod
    def from_moments(cls, value, bias, covariance, alpha: float) -> "ErrorQuantity":
        """Build from raw finite-level moments: the stored bias and gamma are ``alpha`` times them."""
        return cls(value, alpha * np.asarray(bias, dtype=float), alpha * np.asarray(covariance, dtype=float), 1.0 / alpha)

    def to_json(self) -> dict:
        return {
            "d": self.dimension,
            "value": self.value.tolist(),
            "bias": self.bias.tolist(),
            "gamma": self.gamma.tolist(),
            "scale": self.scale,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ErrorQuantity":
        e = cls(doc["value"], doc["bias"], doc["gamma"], doc.get("scale", 1.0))
        if "d" in doc and int(doc["d"]) != e.dimension:
            raise ValueError(f"declared d={doc['d']} but value has length {e.dimension}")
        return e


def _as_map(f, d: int) -> list[TestFunction]:
    maps = [f] if isinstance(f, (TestFunction, str)) else list(f)
    maps = [as_function(m, d) for m in maps]
    for m in maps:
        if m.dimension != d:
            raise ValueError(f"dimension mismatch: map takes {m.dimension} arguments, quantity has {d}")
    return maps


def propagate_weak(e: ErrorQuantity, f) -> ErrorQuantity:
    """First-order propagation: new bias ``J b``, gamma dropped."""
    maps = _as_map(f, e.dimension)
    jets = [m.jet(e.value, order=1) for m in maps]
    J = np.stack([j.gradient for j in jets])
    q = len(maps)
    return ErrorQuantity([j.value for j in jets], J @ e.bias, np.zeros((q, q)), e.scale)


def propagate_strong(e: ErrorQuantity, f) -> ErrorQuantity:
    """Second-order propagation.

    bias_k = grad f_k . b + 1/2 tr(Hess f_k gamma), gamma_kl = grad f_k^T gamma grad f_l
    """
    _check_psd(e.gamma)
    maps = _as_map(f, e.dimension)
    jets = [m.jet(e.value) for m in maps]
    J = np.stack([j.gradient for j in jets])
    bias = J @ e.bias + 0.5 * np.array([np.sum(j.hessian * e.gamma) for j in jets])
    gamma = J @ e.gamma @ J.T
    return ErrorQuantity([j.value for j in jets], bias, 0.5 * (gamma + gamma.T), e.scale)


# --- coefficient fields -----------------------------------------------------


class Field:
    """Vector- or matrix-valued coefficient evaluated at points of shape ``(..., d)``."""

    shape: tuple[int, ...]

    def __call__(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_json(self):
        raise TypeError(f"{type(self).__name__} is not serialisable")


@dataclass(frozen=True)
class ExprField(Field):
    """Field whose components are test-function expressions."""

    components: tuple  # nested tuples of TestFunction, shape (d,) or (d, d)
    shape: tuple[int, ...]

    @classmethod
    def parse(cls, doc, dimension: int) -> "ExprField":
        arr = np.array(doc, dtype=object)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        funcs = np.vectorize(lambda s: TestFunction(parse_expr(str(s)), dimension, name=str(s)), otypes=[object])(arr)
        return cls(tuple(funcs.ravel().tolist()), arr.shape)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        vals = np.stack([f(y) for f in self.components], axis=-1)
        return vals.reshape(y.shape[:-1] + self.shape)

    def to_json(self):
        names = np.array([str(f.expr) for f in self.components], dtype=object).reshape(self.shape)
        out = names.tolist()
        return out[0] if self.shape == (1,) else out


@dataclass(frozen=True, eq=False)
class ConstantField(Field):
    array: np.ndarray

    @property
    def shape(self):
        return np.shape(self.array)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(self.array, y.shape[:-1] + self.shape)

    def to_json(self):
        arr = np.asarray(self.array, dtype=float)
        out = np.vectorize(repr, otypes=[object])(arr).tolist()
        return out[0] if arr.shape == (1,) else out


@dataclass(frozen=True, eq=False)
class CallableField(Field):
    fn: Callable[[np.ndarray], np.ndarray]
    shape: tuple[int, ...]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.asarray(self.fn(y), dtype=float).reshape(y.shape[:-1] + self.shape)


@dataclass(frozen=True, eq=False)
class BinnedField(Field):
    """Conditional averages tabulated on bins of the output coordinates.

    One output coordinate: piecewise-linear interpolation between bin means of
    the coordinate, constant beyond the outermost bins.  Several coordinates:
    piecewise-constant lookup on the product grid of per-axis quantile bins.
    Empty bins hold NaN.
    """

    edges: tuple[np.ndarray, ...]
    centres: tuple[np.ndarray, ...]
    table: np.ndarray  # grid shape + field shape
    shape: tuple[int, ...]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        batch = y.shape[:-1]
        flat = y.reshape(-1, y.shape[-1])
        if len(self.edges) == 1:
            c = self.centres[0]
            tab = self.table.reshape(len(c), -1)
            ok = np.all(np.isfinite(tab), axis=1)
            out = np.stack([np.interp(flat[:, 0], c[ok], tab[ok, k]) for k in range(tab.shape[1])], axis=-1)
        else:
            idx = tuple(
                np.clip(np.searchsorted(e, flat[:, a], side="right") - 1, 0, len(e) - 2) for a, e in enumerate(self.edges)
            )
            out = self.table[idx].reshape(flat.shape[0], -1)
        return out.reshape(batch + self.shape)


def field_from_json(doc, dimension: int, matrix: bool) -> Field:
    f = ExprField.parse(doc, dimension)
    want = (dimension, dimension) if matrix else (dimension,)
    if f.shape != want:
        raise ValueError(f"field has shape {f.shape}, expected {want}")
    return f


# --- Dirichlet structures ---------------------------------------------------


@dataclass(frozen=True)
class DirichletStructure:
    """Coefficients of the bias operators of one approximation.

    ``diffusion`` is theta (so Gamma[phi] = grad^T theta grad), ``drift`` the
    first-order coefficient of the symmetric operator (1/2 sum_i rho_ij), and
    ``theoretical_drift`` the first-order coefficient z of the theoretical
    operator.  ``drift=None`` means the rho coefficients are unknown.
    """

    dimension: int
    diffusion: Field
    drift: Field | None = None
    theoretical_drift: Field | None = None
    measure: Law | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def theta(self, y) -> np.ndarray:
        return self.diffusion(y)

    def z(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.theoretical_drift is None:
            return np.zeros(y.shape)
        return self.theoretical_drift(y)

    def _second_order(self, jet: Jet2, y) -> np.ndarray:
        if jet.hessian is None:
            raise ValueError("operator needs the Hessian; evaluate the jet with order=2")
        return 0.5 * np.einsum("...ij,...ij->...", self.theta(y), jet.hessian)

    def theoretical(self, jet: Jet2, y) -> np.ndarray:
        return np.einsum("...i,...i->...", self.z(y), jet.gradient) + self._second_order(jet, y)

    def generator(self, jet: Jet2, y) -> np.ndarray:
        """Symmetric bias operator applied to a jet evaluated at ``y``."""
        if self.drift is None:
            raise ValueError("symmetric operator unavailable: structure has no rho coefficients")
        return np.einsum("...i,...i->...", self.drift(y), jet.gradient) + self._second_order(jet, y)

    def square_field(self, a: Jet2, y, b: Jet2 | None = None) -> np.ndarray:
        b = a if b is None else b
        return np.einsum("...i,...ij,...j->...", a.gradient, self.theta(y), b.gradient)

    def to_json(self) -> dict:
        doc = {"d": self.dimension, "diffusion": self.diffusion.to_json()}
        if self.drift is not None:
            doc["drift"] = self.drift.to_json()
        if self.theoretical_drift is not None:
            doc["theoretical_drift"] = self.theoretical_drift.to_json()
        if self.measure is not None:
            doc["measure"] = self.measure.to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DirichletStructure":
        d = int(doc.get("d", 1))
        drift = field_from_json(doc["drift"], d, False) if "drift" in doc else None
        tdrift = field_from_json(doc["theoretical_drift"], d, False) if "theoretical_drift" in doc else None
        measure = law_from_json(doc["measure"], d) if "measure" in doc else None
        return cls(d, field_from_json(doc["diffusion"], d, True), drift, tdrift, measure)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def square_field_from_generator(
    generator: Callable[[Jet2, np.ndarray], np.ndarray], phi: TestFunction, y
) -> np.ndarray:
    """Gamma[phi](y) = A[phi^2](y) - 2 phi(y) A[phi](y) for a generator acting on jets."""
    jet = phi.jet(y)
    return generator(jet * jet, y) - 2.0 * jet.value * generator(jet, y)


class OperatorValues(NamedTuple):
    a_bar: np.ndarray
    a_tilde: np.ndarray | None
    a_under: np.ndarray | None
    a_slash: np.ndarray | None

    @property
    def complete(self) -> bool:
        return self.a_tilde is not None


def scheme_operators(structure: DirichletStructure, phi: TestFunction, y) -> OperatorValues:
    """The four bias operators of ``phi`` at ``y``; the last three need the rho coefficients."""
    jet = phi.jet(y)
    a_bar = structure.theoretical(jet, y)
    if structure.drift is None:
        return OperatorValues(a_bar, None, None, None)
    a_tilde = structure.generator(jet, y)
    return OperatorValues(a_bar, a_tilde, 2.0 * a_tilde - a_bar, a_bar - a_tilde)


# --- image structures -------------------------------------------------------


def _quantile_edges(v: np.ndarray, bins: int) -> np.ndarray:
    edges = np.quantile(v, np.linspace(0.0, 1.0, bins + 1))
    edges = np.unique(edges)
    if edges.size < 2:
        edges = np.array([v.min(), v.max() + 1.0])
    edges[-1] = np.nextafter(edges[-1], np.inf)
    return edges


def image_structure(
    s_in: DirichletStructure,
    phi_map: Sequence[TestFunction] | TestFunction,
    *,
    samples: int = 200_000,
    bins: int = 64,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> DirichletStructure:
    """Image of ``s_in`` under ``Phi``, conditional averages taken by equal-count binning.

    The output carries ``Gamma_out[u](y) = grad u(y)^T E[Gamma_in[Phi](X)|Phi(X)=y] grad u(y)``
    and the analogous drifts, read off from the jets of ``Phi``.  ``diagnostics``
    reports bin counts and missing (empty) bins.
    """
    maps = [phi_map] if isinstance(phi_map, TestFunction) else list(phi_map)
    if s_in.measure is None:
        raise ValueError("input structure needs a measure to sample from")
    p = s_in.dimension
    for m in maps:
        if m.dimension != p:
            raise ValueError(f"dimension mismatch: map takes {m.dimension} arguments, structure has {p}")
    q = len(maps)
    rng = rng if rng is not None else substream(seed, "image-structure")
    x = s_in.measure.sample(rng, samples)
    jets = [m.jet(x) for m in maps]
    y = np.stack([j.value for j in jets], axis=-1)
    J = np.stack([j.gradient for j in jets], axis=-2)  # (N, q, p)
    theta = s_in.theta(x)
    gamma_phi = np.einsum("nkp,npr,nlr->nkl", J, theta, J)
    tilde_phi = None
    second = np.stack([0.5 * np.einsum("nij,nij->n", theta, j.hessian) for j in jets], axis=-1)
    theo_phi = np.einsum("np,nkp->nk", s_in.z(x), J) + second
    if s_in.drift is not None:
        tilde_phi = np.einsum("np,nkp->nk", s_in.drift(x), J) + second

    per_axis = bins if q == 1 else max(2, int(round(bins ** (1.0 / q))))
    edges = tuple(_quantile_edges(y[:, a], per_axis) for a in range(q))
    idx = [np.clip(np.searchsorted(e, y[:, a], side="right") - 1, 0, len(e) - 2) for a, e in enumerate(edges)]
    grid = tuple(len(e) - 1 for e in edges)
    flat = np.ravel_multi_index(idx, grid)
    ncell = int(np.prod(grid))
    counts = np.bincount(flat, minlength=ncell).astype(float)

    def cell_mean(values: np.ndarray) -> np.ndarray:
        v = values.reshape(samples, -1)
        sums = np.stack([np.bincount(flat, weights=v[:, k], minlength=ncell) for k in range(v.shape[1])], axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = sums / counts[:, None]
        return means.reshape(grid + values.shape[1:])

    if q == 1:
        centres = (cell_mean(y).ravel(),)
    else:
        centres = tuple(0.5 * (e[:-1] + e[1:]) for e in edges)

    diffusion = BinnedField(edges, centres, cell_mean(gamma_phi), (q, q))
    theo = BinnedField(edges, centres, cell_mean(theo_phi), (q,))
    drift = BinnedField(edges, centres, cell_mean(tilde_phi), (q,)) if tilde_phi is not None else None
    missing = int(np.sum(counts == 0))
    return DirichletStructure(
        q,
        diffusion,
        drift,
        theo,
        PushforwardLaw(s_in.measure, tuple(maps)),
        {"bins": grid, "counts": counts.reshape(grid), "missing": missing},
    )
