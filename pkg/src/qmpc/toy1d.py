"""One-dimensional piecewise-affine test system.

The plant is

    x+ = 0.9 x + u + 0.2 z,    z = delta * x,    delta = 1  <=>  x >= 0,

with |x| <= 10 and |u| <= 1, i.e. an unstable mode (gain 1.1) for
non-negative states and a stable mode (gain 0.9) for negative ones.  The
logic is encoded with the standard big-M recipe (M = 10):

    x <= M delta,   x >= -M (1 - delta)          (mode indicator)
    |z| <= M delta,  x - M(1-delta) <= z <= x + M(1-delta)   (z = delta x)

Being scalar, the system admits an exact value-function oracle by state
gridding, which is what the validation suite uses.
"""

import numpy as np

from .mld import MldSystem, StageCost

BIG_M = 10.0
X_MAX = 10.0
U_MAX = 1.0


def build_toy1d(gamma=0.95, epsilon=1e-9):
    """Construct the system and stage cost (Q = R = 1, goal at the origin)."""
    M = BIG_M
    # Rows of (E2, E3, E4, E1, E5); constraint sense E2 d + E3 z <= E4 x + E1 u + E5.
    rows = [
        (-M, 0.0, -1.0, 0.0, 0.0),    # x <= M delta
        (M, 0.0, 1.0, 0.0, M),        # x >= -M (1 - delta)
        (-M, 1.0, 0.0, 0.0, 0.0),     # z <= M delta
        (-M, -1.0, 0.0, 0.0, 0.0),    # z >= -M delta
        (M, 1.0, 1.0, 0.0, M),        # z <= x + M (1 - delta)
        (M, -1.0, -1.0, 0.0, M),      # z >= x - M (1 - delta)
        (0.0, 0.0, -1.0, 0.0, X_MAX),  # x <= 10
        (0.0, 0.0, 1.0, 0.0, X_MAX),   # x >= -10
        (0.0, 0.0, 0.0, -1.0, U_MAX),  # u <= 1
        (0.0, 0.0, 0.0, 1.0, U_MAX),   # u >= -1
    ]
    E2 = np.array([[r[0]] for r in rows])
    E3 = np.array([[r[1]] for r in rows])
    E4 = np.array([[r[2]] for r in rows])
    E1 = np.array([[r[3]] for r in rows])
    E5 = np.array([r[4] for r in rows])

    sys = MldSystem(
        A=[[0.9]], B1=[[1.0]], B2=[[0.0]], B3=[[0.2]],
        E1=E1, E2=E2, E3=E3, E4=E4, E5=E5,
    )
    cost = StageCost(Q=[[1.0]], R=[[1.0]], x_g=[0.0], u_g=[0.0],
                     gamma=gamma, epsilon=epsilon)
    return sys, cost


def mode_feasible(x, u, delta, z, tol=0.0):
    """Logical (non-matrix) membership test used to validate the encoding.

    Mirrors the definition of the hybrid system directly: mode indicator
    consistent with sign(x), z = delta * x, and the state/input boxes.
    """
    if delta not in (0.0, 1.0):
        return False
    if abs(x) > X_MAX + tol or abs(u) > U_MAX + tol:
        return False
    if delta == 1.0 and x < -tol:
        return False
    if delta == 0.0 and x > tol:
        return False
    return abs(z - delta * x) <= tol
