"""NeuroVE: spiking time-series toolkit (ALIF neurons, ASLSTM cells,
event-stream spike encoding, and surrogate-gradient training)."""

try:
    # installed layout: the extension lives inside the package
    from ._neurove import *  # noqa: F401,F403
except ImportError:
    # build-tree layout: the extension sits on PYTHONPATH
    from _neurove import *  # noqa: F401,F403
