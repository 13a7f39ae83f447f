"""Feasibility problem assembly, solving and certificate I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ..model import (ConverterParams, DomainError, EquilibriumPoint, Polarity, UncertaintyBox,
                     build_mode, enumerate_delta_vertices, error_dynamics)
from . import assembly
from .assembly import VariableLayout
from .backends import get_backend

DEFAULT_ALPHA = 1e4
DEFAULT_EPSILON = 1e-8
DEFAULT_BOUND = 1e4


class Infeasible(Exception):
    """No certificate with the requested margin was found.

    ``best`` holds the max-margin point the backend returned (uncertified),
    ``reason`` is ``"no-margin"`` or ``"ill-conditioned"``.
    """

    def __init__(self, message, best=None, reason="no-margin"):
        super().__init__(message)
        self.best = best
        self.reason = reason


@dataclass(frozen=True)
class VertexData:
    """Error dynamics of every mode at one parameter vertex (SI units)."""

    A: tuple
    K: np.ndarray
    label: tuple = ()

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def m(self) -> int:
        return self.K.shape[1]

    def scaled(self, d: np.ndarray) -> "VertexData":
        """Data in coordinates ``z = diag(d) e``."""
        D, Di = np.diag(d), np.diag(1.0 / d)
        return VertexData(tuple(D @ a @ Di for a in self.A), D @ self.K, self.label)


@dataclass
class AffineBlock:
    constant: np.ndarray
    coeffs: np.ndarray
    sign: int
    scale: float
    label: dict

    def evaluate(self, x) -> np.ndarray:
        return self.constant + np.tensordot(np.asarray(x, dtype=float), self.coeffs, axes=1)


@dataclass
class LmiProblem:
    n: int
    m: int
    alpha: np.ndarray
    epsilon: float
    scaling: np.ndarray
    vertices: list
    Q_a: np.ndarray
    blocks: list
    polarity: Optional[Polarity] = None
    params: Optional[ConverterParams] = None
    box: Optional[UncertaintyBox] = None
    bound: float = DEFAULT_BOUND

    @property
    def layout(self) -> VariableLayout:
        return VariableLayout(self.n, self.m)

    def vertex_factory(self) -> Optional[Callable]:
        """Maps a physical parameter point ``(R_L, i_eq, v_in)`` to VertexData."""
        if self.params is None or self.polarity is None:
            return None
        params, polarity = self.params, self.polarity
        return lambda R_L, i_eq, v_in: tpbr_vertex(params, polarity, R_L, i_eq, v_in)


def tpbr_vertex(params: ConverterParams, polarity: Polarity, R_L: float, i_eq: float,
                v_in: float) -> VertexData:
    x_eq = EquilibriumPoint(i_eq, params.V_o)
    A_list, K_cols = [], []
    for idx in polarity.modes:
        A, k = error_dynamics(build_mode(idx, params, v_in, R_L), x_eq)
        A_list.append(A)
        K_cols.append(k)
    return VertexData(tuple(A_list), np.column_stack(K_cols), (R_L, i_eq, v_in))


def energy_scaling(params: ConverterParams) -> np.ndarray:
    """``z = [sqrt(L) i, sqrt(C) v]``: both coordinates in sqrt(joule)."""
    return np.array([math.sqrt(params.L_B), math.sqrt(params.C_o)])


def _resolve_scaling(scaling, n, params=None) -> np.ndarray:
    if scaling is None:
        return np.ones(n)
    if isinstance(scaling, str):
        if scaling == "energy":
            if params is None:
                raise DomainError("energy scaling needs converter parameters")
            return energy_scaling(params)
        if scaling == "none":
            return np.ones(n)
        raise DomainError(f"unknown scaling {scaling!r}")
    d = np.asarray(scaling, dtype=float).ravel()
    if d.size != n or np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise DomainError("scaling must be n positive finite entries")
    return d


def _affine_block(fn, layout: VariableLayout, sign: int, scale: float, label: dict) -> AffineBlock:
    zero = np.zeros(layout.size)
    const = fn(*layout.unpack(zero))
    coeffs = np.empty((layout.size,) + const.shape)
    for k in range(layout.size):
        e = np.zeros(layout.size)
        e[k] = 1.0
        coeffs[k] = fn(*layout.unpack(e)) - const
    return AffineBlock(const, coeffs, sign, scale, label)


def problem_from_vertices(vertices, alpha=DEFAULT_ALPHA, epsilon=DEFAULT_EPSILON, scaling=None,
                          Q_a=None, polarity=None, params=None, box=None,
                          bound=DEFAULT_BOUND) -> LmiProblem:
    """Assemble the vertex blocks for arbitrary switched affine error dynamics."""
    vertices = list(vertices)
    if not vertices:
        raise DomainError("empty polytope: no vertices")
    n, m = vertices[0].n, vertices[0].m
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (m,)).copy()
    d = _resolve_scaling(scaling, n, params)
    if Q_a is None:
        Q_a = assembly.null_space_basis(assembly.constraint_row(n, m))
    layout = VariableLayout(n, m)
    blocks = []
    for vi, vertex in enumerate(vertices):
        work = vertex.scaled(d)
        scale = assembly.data_scale(work.A, work.K)
        thetas = assembly.simplex_vertices(m)
        for ti, theta in enumerate(thetas):
            def fn(P0, S, L, work=work, theta=theta):
                M = assembly.full_block(work.A, work.K, alpha, theta, P0, S, L)
                return Q_a.T @ M @ Q_a
            blocks.append(_affine_block(fn, layout, -1, scale,
                                        {"family": "decrease", "vertex": vi, "theta": ti,
                                         "delta": tuple(float(v) for v in vertex.label)}))
    blocks.append(_affine_block(lambda P0, S, L: P0, layout, +1, 1.0, {"family": "positivity"}))
    return LmiProblem(n, m, alpha, float(epsilon), d, vertices, Q_a, blocks,
                      polarity=polarity, params=params, box=box, bound=bound)


def build_feasibility_problem(params: ConverterParams, polarity, alpha=DEFAULT_ALPHA,
                              epsilon=DEFAULT_EPSILON, box: Optional[UncertaintyBox] = None,
                              scaling="energy", Q_a=None, bound=DEFAULT_BOUND) -> LmiProblem:
    polarity = Polarity.parse(polarity)
    if box is None:
        box = UncertaintyBox.for_polarity(params, polarity)
    deltas = enumerate_delta_vertices(box)
    vertices = [tpbr_vertex(params, polarity, *delta) for delta in deltas]
    return problem_from_vertices(vertices, alpha, epsilon, scaling, Q_a, polarity, params, box,
                                 bound)


# -- certificate -----------------------------------------------------------

def _t_diag(d: np.ndarray, m: int) -> np.ndarray:
    return np.concatenate([np.tile(d, m), np.ones(m)])


def from_working(P0z, Sz, Lz, d: np.ndarray, m: int):
    """Working-coordinate decision variables -> SI."""
    D = np.diag(d)
    r_rep = Lz.shape[1] // d.size if d.size else 0
    P0 = D @ P0z @ D
    S = D @ Sz
    L = _t_diag(d, m)[:, None] * Lz * np.tile(d, r_rep)[None, :]
    return P0, S, L


def to_working(P0, S, L, d: np.ndarray, m: int):
    Di = np.diag(1.0 / d)
    r_rep = L.shape[1] // d.size if d.size else 0
    P0z = Di @ P0 @ Di
    Sz = Di @ S
    Lz = L / _t_diag(d, m)[:, None] / np.tile(d, r_rep)[None, :]
    return P0z, Sz, Lz


@dataclass
class LmiCertificate:
    """Solution of one polarity's problem, stored in SI coordinates."""

    P0: np.ndarray
    S: np.ndarray
    L: np.ndarray
    margin: float
    feasible: bool
    polarity: Optional[Polarity] = None
    alpha: Optional[np.ndarray] = None
    epsilon: float = DEFAULT_EPSILON
    scaling: Optional[np.ndarray] = None
    residual_spectra: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        n = self.P0.shape[0]
        return {
            "schema": "tpbr-certificate/1",
            "polarity": self.polarity.name.lower() if self.polarity else None,
            "modes": list(self.polarity.modes) if self.polarity else None,
            "P0": [float(v) for v in self.P0[np.triu_indices(n)]],
            "S": [[float(v) for v in col] for col in self.S.T],
            "L": [[float(v) for v in row] for row in self.L],
            "margin": float(self.margin),
            "feasible": bool(self.feasible),
            "alpha": [float(a) for a in self.alpha] if self.alpha is not None else None,
            "epsilon": float(self.epsilon),
            "scaling": [float(v) for v in self.scaling] if self.scaling is not None else None,
            "solver": _jsonable(self.solver),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LmiCertificate":
        try:
            tri = np.asarray(doc["P0"], dtype=float)
            n = int(round((math.sqrt(8 * tri.size + 1) - 1) / 2))
            if n * (n + 1) // 2 != tri.size:
                raise ValueError("P0 upper triangle has invalid length")
            P0 = np.zeros((n, n))
            P0[np.triu_indices(n)] = tri
            P0 = P0 + np.triu(P0, 1).T
            S = np.asarray(doc["S"], dtype=float).T
            if S.ndim != 2 or S.shape[0] != n:
                raise ValueError("S must be a list of n-vectors")
            L = np.asarray(doc["L"], dtype=float)
            if L.size == 0:
                L = np.zeros((n * S.shape[1] + S.shape[1], 0))
            polarity = Polarity.parse(doc["polarity"]) if doc.get("polarity") else None
            alpha = np.asarray(doc["alpha"], dtype=float) if doc.get("alpha") is not None else None
            scaling = (np.asarray(doc["scaling"], dtype=float)
                       if doc.get("scaling") is not None else None)
            cert = cls(P0, S, L, float(doc["margin"]), bool(doc["feasible"]), polarity, alpha,
                       float(doc.get("epsilon", DEFAULT_EPSILON)), scaling,
                       solver=dict(doc.get("solver", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed certificate: {exc}") from exc
        if not (np.all(np.isfinite(P0)) and np.all(np.isfinite(S)) and np.all(np.isfinite(L))):
            raise ValueError("malformed certificate: non-finite entries")
        return cert

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "LmiCertificate":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed certificate: {exc}") from exc
        return cls.from_dict(doc)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def block_spectra(problem: LmiProblem, x: np.ndarray) -> list[dict]:
    """Extreme eigenvalues of every normalised block at decision point ``x``."""
    out = []
    for block in problem.blocks:
        M = block.evaluate(x) / block.scale
        eig = np.linalg.eigvalsh((M + M.T) / 2)
        out.append({**block.label, "min": float(eig[0]), "max": float(eig[-1])})
    return out


def solve_feasibility(problem: LmiProblem, backend="cvxopt") -> LmiCertificate:
    """Maximise the common margin; raise :class:`Infeasible` below ``epsilon``."""
    solve = get_backend(backend)
    layout = problem.layout
    bounded = np.arange(layout.n_p, layout.size)
    A_eq = np.vstack([layout.trace_row()[None, :], layout.gauge_rows()])
    b_eq = np.concatenate([[1.0], np.zeros(A_eq.shape[0] - 1)])
    res = solve(problem.blocks, layout.size, A_eq=A_eq, b_eq=b_eq,
                box_index=bounded, box_bound=problem.bound)
    if not np.all(np.isfinite(res.x)):
        raise Infeasible(f"backend returned no point ({res.status})", reason="ill-conditioned")
    spectra = block_spectra(problem, res.x)
    worst_neg = max((s["max"] for s in spectra if s["family"] == "decrease"), default=-np.inf)
    worst_pos = min(s["min"] for s in spectra if s["family"] == "positivity")
    achieved = min(-worst_neg, worst_pos)
    P0z, Sz, Lz = layout.unpack(res.x)
    P0, S, L = from_working(P0z, Sz, Lz, problem.scaling, problem.m)
    cert = LmiCertificate(P0, S, L, margin=float(res.t), feasible=False,
                          polarity=problem.polarity, alpha=problem.alpha.copy(),
                          epsilon=problem.epsilon, scaling=problem.scaling.copy(),
                          residual_spectra=spectra,
                          solver={**res.info, "status": res.status, "achieved_margin": achieved})
    if res.t < problem.epsilon:
        raise Infeasible(f"max margin {res.t:.3e} below epsilon {problem.epsilon:.1e}",
                         best=cert, reason="no-margin")
    if achieved < problem.epsilon:
        raise Infeasible(f"backend margin {res.t:.3e} not reproduced by block spectra "
                         f"({achieved:.3e})", best=cert, reason="ill-conditioned")
    cert.feasible = True
    return cert


def scale_law(law, d):
    """Express a law ``(P0, S[, L])`` in scaled states ``z = diag(d) x``.

    ``P0 -> D^-1 P0 D^-1`` and ``S_i -> D^-1 S_i`` so that
    ``(D e)' S_i^z == e' S_i`` for every mode.
    """
    d = np.asarray(d, dtype=float)
    if d.ndim == 2:
        if np.any(d != np.diag(np.diag(d))):
            raise DomainError("scaling must be diagonal")
        d = np.diag(d)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise DomainError("scaling entries must be positive")
    Di = np.diag(1.0 / d)
    changes = {"P0": Di @ law.P0 @ Di, "S": Di @ law.S}
    if isinstance(law, LmiCertificate):
        _, _, Lz = to_working(law.P0, law.S, law.L, d, law.S.shape[1])
        changes["L"] = Lz
    return replace(law, **changes)


def synthesize_pair(params: ConverterParams, alpha=DEFAULT_ALPHA, epsilon=DEFAULT_EPSILON,
                    backend="cvxopt", scaling="energy", boxes=None):
    """Solve both half-cycle problems.

    Returns ``(certificates, errors)`` keyed by polarity.  When a problem is
    infeasible its entry in ``certificates`` is the uncertified max-margin
    point (``feasible=False``) and ``errors`` holds the exception; this keeps
    a best-effort law available for simulation.
    """
    certs, errors = {}, {}
    for polarity in (Polarity.POSITIVE, Polarity.NEGATIVE):
        box = None if boxes is None else boxes.get(polarity)
        problem = build_feasibility_problem(params, polarity, alpha=alpha, epsilon=epsilon,
                                            box=box, scaling=scaling)
        try:
            certs[polarity] = solve_feasibility(problem, backend=backend)
        except Infeasible as exc:
            errors[polarity] = exc
            if exc.best is None:
                raise
            certs[polarity] = exc.best
    return certs, errors
