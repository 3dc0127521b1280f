"""Weakly semi-supervised multiple instance learning with bag/instance cross-consistency.

Modules:

``mildata``      synthetic Gaussian-cluster bags, partitions, dataset files
``numkernel``    dense layers, BCE, softmax, SGD, finite-difference checks
``bagbranch``    attention-pooling bag classifier
``insbranch``    per-instance classifier with max or mean pooling
``crocotrain``   cross-consistency training and the baselines
``evalreport``   AUC, probes, experiment grids, CSV output
``checkpoint``   plain-text model files
``cli``          the ``croco`` command

Dense kernels come from a compiled extension when it is built, otherwise
from numpy; set ``CROCO_PURE_PYTHON=1`` to force the numpy path.
"""

from ._backend import BACKEND
from .crocotrain import TrainConfig, fit, infer, init_model
from .evalreport import auc, evaluate, run_grid
from .mildata import GenConfig, generate, load, partition, save

__all__ = ["BACKEND", "GenConfig", "TrainConfig", "auc", "evaluate", "fit", "generate", "infer", "init_model",
           "load", "partition", "run_grid", "save"]
__version__ = "0.1.0"
