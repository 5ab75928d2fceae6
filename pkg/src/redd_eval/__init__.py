"""Impact evaluation of avoided-deforestation projects on spatial panels.

Synthetic control with placebo inference, generalized synthetic control,
matching-based robustness checks and carbon-offset crediting.
"""

from __future__ import annotations

__version__ = "0.1.0"
