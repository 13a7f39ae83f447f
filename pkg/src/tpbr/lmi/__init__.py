"""Switching-rule synthesis as a max-margin LMI feasibility problem."""
from .assembly import (VariableLayout, annihilator, assemble_cb, assemble_phi, assemble_psi,
                       full_block, null_space_basis)
from .backends import BACKENDS, BackendResult
from .problem import (DEFAULT_ALPHA, DEFAULT_EPSILON, AffineBlock, Infeasible, LmiCertificate,
                      LmiProblem, VertexData, build_feasibility_problem, energy_scaling,
                      problem_from_vertices, scale_law, solve_feasibility, synthesize_pair,
                      tpbr_vertex)
from .verify import VerificationReport, verify_certificate

__all__ = [
    "VariableLayout", "annihilator", "assemble_cb", "assemble_phi", "assemble_psi", "full_block",
    "null_space_basis", "BACKENDS", "BackendResult", "DEFAULT_ALPHA", "DEFAULT_EPSILON",
    "AffineBlock", "Infeasible", "LmiCertificate", "LmiProblem", "VertexData",
    "build_feasibility_problem", "energy_scaling", "problem_from_vertices", "scale_law",
    "solve_feasibility", "synthesize_pair", "tpbr_vertex", "VerificationReport",
    "verify_certificate",
]
