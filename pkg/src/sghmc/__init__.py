"""Stochastic-gradient Hamiltonian Monte Carlo and friends.

Submodules: ``models`` (targets and gradient oracles), ``samplers``
(HMC, SGHMC, SGLD, SGD variants), ``fpe`` (phase-space Fokker-Planck lab),
``diagnostics``, ``bayes`` (desk-scale applications) and the config-driven
harness behind the ``sghmc`` command.
"""

from .errors import (ConfigurationError, ConvergenceError, DegenerateSeriesError, DimensionError,
                     DivergenceError, EmptyDatasetError, UnsupportedConfigurationError)
from .models import (DoubleWell, ExactGradient, Gaussian, MassMatrix, MinibatchGradient,
                     NoisyGradient, PhaseState, SymMatrix, correlated_gaussian, hamiltonian,
                     quadratic)
from .rng import make_rng, spawn, streams
from .samplers import (HmcConfig, MomentumFormConfig, SampleChain, SghmcConfig, hmc_chain,
                       leapfrog, momentum_form_chain, momentum_form_step, naive_sghmc_chain,
                       reparameterize, sghmc_chain, sghmc_step, sgld_chain, sgld_step)

__version__ = "0.1.0"
