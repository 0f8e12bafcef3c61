"""Frequency-domain tile processor for quad stereo cameras.

Modules: ``dtt`` and ``mclt`` (transforms), ``fd`` (frequency-domain tile
operations and phase correlation), ``geometry``, ``pipeline``,
``disparity``, ``synth`` (synthetic scenes), ``io`` and ``cli``.
"""

__version__ = "0.1.0"
