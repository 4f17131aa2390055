"""Minimum-bitrate LQG control over a prefix-free binary feedback channel.

Modules:

* ``control``   plant model, control Riccati equation, filter covariances
* ``rdf``       log-det rate bound and its test channel
* ``quantizer`` dithered uniform quantizer and shared dither stream
* ``codec``     Shannon-Fano-Elias prefix codes, escape coding, bit I/O
* ``loop``      closed-loop encoder/decoder simulation
* ``invariant`` invariant law of the scalar error chain and the fixed codec
"""
from .codec import (BitReader, BitWriter, Codebook, FinitePmf, build_fano, build_shannon_sorted,
                    conditional_codebook, decode, encode)
from .control import (ControlSolution, EstimatorGains, PlantModel, filter_prior_sequence,
                      solve_control_dare)
from .errors import (DegenerateChannel, InfeasibleBudget, MalformedStream, NonStabilizable,
                     NumericalFailure, PrefixLQGError, SyncLoss, UnstableChain)
from .loop import (LoopConfig, LoopSummary, LoopTrace, gaussian_conditional_pmf,
                   gaussian_marginal_pmf, run_loop)
from .quantizer import DitherStream, dither_quantize, quantize
from .rdf import RdfSolution, extract_test_channel, solve_rdf, solve_rdf_mimo, solve_rdf_siso

__version__ = "0.1.0"
