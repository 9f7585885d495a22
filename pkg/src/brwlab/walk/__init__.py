"""Fluctuation theory of the spine walk and of lattice walks."""
from .checks import (BallotReport, GreenSumResult, HarmonicityResult, IdentityResult, KozlovTable,
                     ballot_bound_check, check_harmonicity, check_renewal_identity,
                     check_tilde_increment_bound, correction_limit, green_sum, kozlov_check,
                     lemma_rhs, tilde_increment_sweep)
from .ladder import LadderSample, ladder_sample
from .lattice import DPResult, LatticeRenewal, lattice_renewal, theta0, tilde_R_exact
from .renewal import (GaussianRenewal, RenewalTable, TildeRQuery, gaussian_renewal, renewal_handle,
                      renewal_minus, renewal_plus, renewal_table, tilde_R)
