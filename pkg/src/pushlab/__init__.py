"""Planar pushing RL lab.

Building blocks: a deterministic 2-D pushing environment with three spatial
task phases, priority-ordered reward hierarchies with constraint gates and
smooth cross-phase blending, a from-scratch PPO learner, and an experiment
harness comparing four reward mechanisms (adaptive, manually scheduled,
fixed, linear sum).
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
