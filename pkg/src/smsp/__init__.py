"""Resilient interval observer for simultaneous mode, state and attack-policy estimation.

Modules: ``interval`` (interval arithmetic and pseudoinverse), ``lp`` (LP
wrapper), ``abstraction`` (parallel affine abstractions), ``mixed_monotone``
(decomposition functions), ``policy`` (Lipschitz policy envelopes),
``observer`` (mode-matched observer), ``modes`` (residuals, elimination and
fusion), ``analysis`` (width bounds, stability search, detectability),
``scenario`` (power-network case study), ``config`` and ``cli``.
"""

__version__ = "0.1.0"
