"""
CIMO: Causal Influence Maximization Operator
---------------------------------------------
Library + CLI for steady-state causal welfare under network diffusion:
  1. Exposure mapping and path constants (graph)
  2. Live-edge diffusion, Monte-Carlo and exact oracles (diffusion)
  3. Shape-constrained exposure–response fitting (response)
  4. Welfare estimands, identification intervals, error budgets (estimand)
  5. Greedy seed selection, baselines, exhaustive oracles (selection)
  6. Synthetic instances, logged data, sweeps (synth)
"""

__version__ = "1.0.0"
__author__ = "AXID.ONE - Number16BusShelter"
__license__ = "MIT"

from . import core


def get_version() -> str:
    return __version__
