"""Desk-scale sequence transducer toolkit.

Factorized blank/label transducer with marginalized training, internal-LM
scoring and beam-search LM fusion, plus single-softmax transducer and CTC
baselines, all checked against brute-force oracles.
"""

__version__ = "0.1.0"

from .lattice import Alphabet, LatticeDims, collapse, ctc_collapse, position
from .network import ModelDims, ModelParams, init_params
from .posterior import ctc_grid, hat_grid, rnnt_grid
from .loss import brute_force_loss, ctc_loss, hat_loss, rnnt_loss

__all__ = [
    "Alphabet", "LatticeDims", "collapse", "ctc_collapse", "position",
    "ModelDims", "ModelParams", "init_params",
    "ctc_grid", "hat_grid", "rnnt_grid",
    "brute_force_loss", "ctc_loss", "hat_loss", "rnnt_loss",
    "__version__",
]
