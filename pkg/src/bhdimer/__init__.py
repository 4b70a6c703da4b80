"""Liouvillian spectra, noiseless subsystems and kick recovery for a driven-dissipative Bose-Hubbard dimer."""

from .fock import FockSpace, OperatorMatrix, create, destroy, displacement, number, parity_operator
from .model import CUTOFF_LADDER, ModelParams, default_space, hamiltonian_bs, hamiltonian_lab, jump_operators, preset
from .liouvillian import SECTORS, SymmetryViolationError, build_liouvillian, extract_block
from .eigensolver import EigenSystem, NonConvergenceError, dense_eig, krylov_eig, shift_invert_eig, solve_block

__version__ = "0.1.0"
