"""Benchmark models: a simply supported Timoshenko beam with a moving force
and a 1-D heat rod with a moving source observed at the source position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from mortv.errors import PositionOutOfRange
from mortv.systems import MovingBoundarySystem, SecondOrderSystem, to_first_order


@dataclass(frozen=True)
class BeamParams:
    length: float = 1.0
    num_elements: int = 451
    elastic_modulus: float = 2.1e11
    density: float = 7850.0
    width: float = 0.01
    height: float = 0.01
    shear_correction: float = 5.0 / 6.0
    poisson_ratio: float = 0.3
    rayleigh_alpha: float = 1e-4
    rayleigh_beta: float = 1e-4

    def __post_init__(self):
        positive = ("length", "elastic_modulus", "density", "width", "height", "shear_correction")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rayleigh_alpha < 0 or self.rayleigh_beta < 0:
            raise ValueError("Rayleigh coefficients must be nonnegative")
        if self.num_elements < 2:
            raise ValueError("num_elements must be >= 2")

    @property
    def area(self):
        return self.width * self.height

    @property
    def second_moment(self):
        return self.width * self.height**3 / 12.0

    @property
    def shear_modulus(self):
        return self.elastic_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def first_order_dimension(self):
        # 2 DOFs per node, w eliminated at both supports, doubled by the first-order form
        return 2 * 2 * self.num_elements


@dataclass(frozen=True)
class HeatRodParams:
    length: float = 10.0
    num_nodes: int = 2500
    diffusivity: float = 1e-3
    source_width: float = 1.0
    discretization: str = "fem"

    def __post_init__(self):
        if self.num_nodes < 3:
            raise ValueError("num_nodes must be >= 3")
        if not self.diffusivity > 0 or not self.length > 0:
            raise ValueError("length and diffusivity must be positive")
        if self.source_width < self.spacing:
            raise ValueError("source_width must be at least the grid spacing")
        if self.discretization not in ("fem", "fd"):
            raise ValueError("discretization must be 'fem' or 'fd'")

    @property
    def spacing(self):
        return self.length / (self.num_nodes + 1)


def _check_position(p, L):
    tol = 1e-12 * L
    if not (-tol <= p <= L + tol):
        raise PositionOutOfRange(f"position {p} outside [0, {L}]")
    return min(max(p, 0.0), L)


def _timoshenko_element(params, h):
    EI = params.elastic_modulus * params.second_moment
    kGA = params.shear_correction * params.shear_modulus * params.area
    rhoA = params.density * params.area
    rhoI = params.density * params.second_moment
    # dof order (w1, theta1, w2, theta2)
    kb = EI / h * np.array([[0, 0, 0, 0], [0, 1, 0, -1], [0, 0, 0, 0], [0, -1, 0, 1]], dtype=float)
    # shear strain w' - theta sampled at the element midpoint (one-point rule)
    g = np.array([-1.0 / h, -0.5, 1.0 / h, -0.5])
    ks = kGA * h * np.outer(g, g)
    lin = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    me = np.zeros((4, 4))
    me[np.ix_([0, 2], [0, 2])] = rhoA * lin
    me[np.ix_([1, 3], [1, 3])] = rhoI * lin
    return kb + ks, me


def build_beam(params=BeamParams()):
    """Assemble the second-order Timoshenko beam with moving-load maps.

    Linear two-node elements with DOFs (deflection, rotation) per node; the
    shear term is integrated with a single midpoint sample to avoid locking.
    The deflections at both supports are eliminated. ``load_map(p)`` spreads
    a unit transverse force over the two deflection DOFs of the element
    containing ``p`` with the linear shape functions; the share falling on a
    support goes into the reaction and is dropped. ``output_map(p)`` samples
    the deflection at ``p`` with the same weights.
    """
    N, L = params.num_elements, params.length
    h = L / N
    ke, me = _timoshenko_element(params, h)
    ndof_full = 2 * (N + 1)
    elem_dofs = 2 * np.arange(N)[:, None] + np.arange(4)[None, :]
    rows = np.repeat(elem_dofs, 4, axis=1).ravel()
    cols = np.tile(elem_dofs, (1, 4)).ravel()
    K_full = sp.coo_matrix((np.tile(ke.ravel(), N), (rows, cols)), shape=(ndof_full,) * 2).tocsr()
    M_full = sp.coo_matrix((np.tile(me.ravel(), N), (rows, cols)), shape=(ndof_full,) * 2).tocsr()
    free = np.setdiff1d(np.arange(ndof_full), [0, 2 * N])
    K = sp.csc_matrix(K_full[free][:, free])
    M = sp.csc_matrix(M_full[free][:, free])
    D = sp.csc_matrix(params.rayleigh_alpha * M + params.rayleigh_beta * K)
    index_of = -np.ones(ndof_full, dtype=int)
    index_of[free] = np.arange(free.size)
    ndof = free.size

    def weights(p):
        p = _check_position(p, L)
        j = int(round(p / h))
        if abs(p - j * h) <= 1e-12 * L:
            return [(j, 1.0)]
        e = min(int(p // h), N - 1)
        xi = (p - e * h) / h
        return [(e, 1.0 - xi), (e + 1, xi)]

    def load_map(p):
        bhat = np.zeros((ndof, 1))
        for node, w in weights(p):
            k = index_of[2 * node]
            if k >= 0:
                bhat[k, 0] += w
        return bhat

    def output_map(p):
        return load_map(p).T

    meta = {
        "model": "beam",
        "element_length": h,
        "nodes": np.linspace(0.0, L, N + 1),
        "deflection_dofs": index_of[0::2],
        "params": params,
    }
    return SecondOrderSystem(M, D, K, load_map, output_map, position_range=(0.0, L), meta=meta)


def beam_system(params=BeamParams(), coupling="load-only", sensor_position=None, load_position=None, F_choice="stiffness"):
    """First-order beam as a :class:`MovingBoundarySystem` for the requested coupling."""
    so = build_beam(params)
    if coupling == "load-only" and sensor_position is None:
        sensor_position = 0.5 * params.length
    if coupling == "sensor-only" and load_position is None:
        load_position = 0.5 * params.length
    if coupling in ("collocated", "independent"):
        sensor_position = load_position = None
    return to_first_order(
        so,
        F_choice=F_choice,
        coupling=coupling,
        load_position=load_position if coupling == "sensor-only" else None,
        sensor_position=sensor_position if coupling == "load-only" else None,
    )


def hat_source(p, half_width):
    """Unit-integral hat function centred at ``p``."""

    def f(x):
        return np.maximum(0.0, 1.0 - np.abs(x - p) / half_width) / half_width

    return f


def build_heat_rod(params=HeatRodParams()):
    """Linear-FEM heat rod with zero Dirichlet ends and a moving hat source.

    ``b(p)_j`` is the exact integral of the hat source against the nodal
    basis function ``phi_j``, and ``c(p) = b(p)^T`` returns the
    source-weighted mean temperature, i.e. the temperature seen at ``p``.
    With ``discretization='fd'`` the mass matrix is lumped and the state is
    rescaled so that ``E = I`` while keeping ``c = b^T``.
    """
    n, L, kappa = params.num_nodes, params.length, params.diffusivity
    h = params.spacing
    a = 0.5 * params.source_width
    ones = np.ones(n)
    stiff = sp.diags([-ones[:-1], 2 * ones, -ones[:-1]], [-1, 0, 1], format="csc") / h
    if params.discretization == "fem":
        E = sp.diags([ones[:-1], 4 * ones, ones[:-1]], [-1, 0, 1], format="csc") * (h / 6.0)
        A = sp.csc_matrix(-kappa * stiff)
        scale = 1.0
    else:
        E = sp.identity(n, format="csc")
        A = sp.csc_matrix(-kappa * stiff / h)
        scale = 1.0 / np.sqrt(h)
    gauss = np.array([-1.0, 1.0]) / np.sqrt(3.0)

    def load(p):
        p = _check_position(p, L)
        lo, hi = max(p - a, 0.0), min(p + a, L)
        inner = np.arange(np.ceil(lo / h), np.floor(hi / h) + 1) * h
        pts = np.unique(np.concatenate([[lo, hi], inner, [p] if lo < p < hi else []]))
        x0, x1 = pts[:-1], pts[1:]
        mid, half = 0.5 * (x0 + x1), 0.5 * (x1 - x0)
        xq = (mid[:, None] + half[:, None] * gauss[None, :]).ravel()
        wq = np.repeat(half, 2)
        fq = np.maximum(0.0, 1.0 - np.abs(xq - p) / a) / a * wq
        # node j at x = j h, interior unknowns j = 1..n map to index j - 1
        left = np.floor(xq / h).astype(int)
        xi = xq / h - left
        b = np.zeros(n + 2)
        np.add.at(b, left, fq * (1.0 - xi))
        np.add.at(b, np.minimum(left + 1, n + 1), fq * xi)
        return (scale * b[1 : n + 1])[:, None]

    def c(p):
        return load(p).T

    meta = {"model": "heat-rod", "nodes": np.arange(1, n + 1) * h, "params": params}
    return MovingBoundarySystem(E, A, load, c, coupling="collocated", position_range=(0.0, L), meta=meta)
