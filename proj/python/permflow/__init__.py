"""Permutation-aware synthesizer inversion toolkit.

Thin Python layer over the C++ core: the k-oscillator synthesizer,
spectral transforms, assignment solvers, audio/parameter metrics, the
parameter-token projection, flow sampling helpers, and the experiment
drivers (train / evaluate / verification suites).
"""

try:
    from permflow._permflow import *  # installed package layout
except ImportError:  # running against a build tree
    from _permflow import *  # noqa: F401,F403

__all__ = [name for name in dir() if not name.startswith("_")]
