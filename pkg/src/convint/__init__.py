"""convint: piecewise-affine convex integration constructions in the plane.

Builds exact piecewise-affine maps whose gradients solve two-well and
three-well differential inclusions with affine boundary data, and measures
the L1 decay, BV growth and fractional Sobolev regularity of the resulting
phase indicators.
"""

__version__ = "0.1.0"
