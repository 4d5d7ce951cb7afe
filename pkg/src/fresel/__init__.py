"""Variable selection for regression with metric-space responses.

Responses (distributions, SPD matrices) are mapped to scalars through
``d^2(Y, y) - d^2(Y, y0)`` and a sparse additive kernel model is fitted
with group Elastic Net or folded-concave (SCAD/MCP) penalties.
"""

__version__ = "0.1.0"
