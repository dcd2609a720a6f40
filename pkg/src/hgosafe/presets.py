"""Built-in configurations."""

from __future__ import annotations

from .config import RunConfig


def double_integrator() -> RunConfig:
    """``x1' = x2, x2' = u`` on ``[-4,4] x [-3,3]`` with ``|u| <= 1``, ``beta = 0.2``,
    ``alpha = (4, 4)``, ``eps = 0.01`` and the sublevel value ``c = 16``."""
    return RunConfig()


PRESETS = {"double-integrator": double_integrator}
