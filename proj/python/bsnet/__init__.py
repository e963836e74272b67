"""Multi-region severity scoring on phantom chest radiographs."""

try:
    from ._bsnet import *  # noqa: F401,F403  (installed wheel layout)
except ImportError:
    from _bsnet import *  # noqa: F401,F403  (in-tree build layout)

REGIONS = "ABCDEF"
