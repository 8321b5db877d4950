from .fields import BallProfileField, ProfileTerm, ScalarField, zero_field
from .schemes import (
    METHODS,
    FracLapConfig,
    build_stencil,
    c_d_alpha,
    draw_directions,
    exact_directions_1d,
    frac_laplacian,
    frac_laplacian_parts,
    imc_frac_laplacian,
    log_c_d_alpha,
    mc_frac_laplacian,
    qe_exterior_far_field,
    qe_frac_laplacian,
    qe_interior_far_field,
    qe_near_field,
    qe_stencil,
)
from .stencil import RayBlock, Stencil, Term, apply_stencil, apply_terms, get_workers, set_workers

__all__ = [
    "BallProfileField",
    "FracLapConfig",
    "METHODS",
    "ProfileTerm",
    "RayBlock",
    "ScalarField",
    "Stencil",
    "Term",
    "apply_stencil",
    "apply_terms",
    "build_stencil",
    "c_d_alpha",
    "draw_directions",
    "exact_directions_1d",
    "frac_laplacian",
    "frac_laplacian_parts",
    "get_workers",
    "imc_frac_laplacian",
    "log_c_d_alpha",
    "mc_frac_laplacian",
    "qe_exterior_far_field",
    "qe_frac_laplacian",
    "qe_interior_far_field",
    "qe_near_field",
    "qe_stencil",
    "set_workers",
    "zero_field",
]
