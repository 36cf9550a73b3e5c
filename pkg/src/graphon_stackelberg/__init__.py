"""Stackelberg-Nash equilibria for linear-quadratic graphon games.

One leader, a continuum of followers on a discretized index grid, and a
continuation-method solver for linear graphon-aggregated FBSDEs.
"""

__version__ = "0.1.0"
