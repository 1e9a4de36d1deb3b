"""Metric-scale monocular depth from GPS-supervised ego-motion.

Modules: ``geo`` (GPS parsing, projection, sync), ``camera`` (pinhole
geometry and warping), ``losses`` (photometric, smoothness and GPS-to-scale
terms), ``optimize`` (direct depth and pose optimisation), ``synth``
(rendered test scenes), ``metrics`` (depth evaluation) and ``cli``.
"""

from .errors import G2SError

__version__ = "0.1.0"
__all__ = ["G2SError", "__version__"]
