"""Traction-control benchmark system.

Discrete-time model of a driveline with a tire whose friction
characteristic is approximated by two affine pieces selected through
indicator variables; the product terms are rewritten with auxiliary
continuous variables and big-M rows in the usual mixed-logical fashion.

States x = (commanded torque memory, engine speed, vehicle speed); inputs
u = (torque rate, road-friction coefficient held at a known constant by a
pair of mirrored rows).  The control objective penalizes the deviation of
the wheel slip  s(x) = S_X . x  from a target of 2 rad/s, plus torque-rate
effort, which makes the state weight a rank-one outer product and the
second input unweighted.

S_X is the same functional the constraint rows use: the slip-nonnegativity
row carries it verbatim, and the mode-boundary rows are a positive multiple
of it offset so the switch happens exactly at the slip target — the target
sits on the friction peak, i.e. on the boundary.  Keeping the cost and the
rows on one functional is what makes the goal reachable; a mismatched slip
definition stalls every policy against the nonnegativity row instead.
"""

from __future__ import annotations

import numpy as np

from .mld import MldSystem, StageCost

#: linear functional giving wheel slip from the state; identical to the
#: slip-nonnegativity constraint row
S_X = np.array([0.0, -0.719942405, 3.355704698])
S_X.setflags(write=False)

#: slip target (rad/s) and the input bias that holds it
DELTA_OMEGA_GOAL = 2.0
MU_S_GOAL = 0.193439319

#: weight on squared slip error in the stage cost
SLIP_WEIGHT = 50.0

_A = [[1.0, 0.0, 0.0],
      [4.8792e-2, 1.0005, -2.1835e-2],
      [-1.5695e-7, -6.4359e-6, 1.0003]]

_B1 = [[1.0, 0.0],
       [4.8792e-2, -6.5287],
       [-1.5695e-7, 8.9695e-2]]

_B2 = [[0.0, 0.0],
       [0.10943, 0.81687],
       [-1.5034e-3, -1.1223e-2]]

_B3 = [[0.0, 0.0],
       [1.0, 0.0],
       [0.0, 1.0]]

_E1 = [[0.0, 5.3781],
       [0.0, -5.3781],
       [0.0, 0.0],
       [0.0, 0.0],
       [0.0, 0.0],
       [0.0, 0.0],
       [-0.000424, 6.17455],
       [0.000424, -6.17455],
       [0.0, 0.0],
       [0.0, 0.0],
       [5.82575e-6, -0.0848295],
       [-5.82575e-6, 0.0848295],
       [0.0, 5.3781],
       [0.0, -5.3781],
       [-1.0, 0.0],
       [1.0, 0.0],
       [-1.0, 0.0],
       [0.0, 0.0],
       [0.0, -1.0],
       [0.0, 1.0],
       [0.0, 0.0],
       [0.0, 0.0],
       [0.0, 0.0],
       [0.0, 0.0],
       [1.0, 0.0]]

_E2 = [[0.0, -73.456664601],
       [0.0, 57.273443009],
       [1.0, 1.0],
       [-1.0, -1.0],
       [-88.586529999, 0.0],
       [-59.558523999, 0.0],
       [59.558523999, 0.0],
       [88.586529999, 0.0],
       [-0.817065082, 0.0],
       [-1.216723605, 0.0],
       [1.216723605, 0.0],
       [0.817065082, 0.0],
       [73.456664601, 0.0],
       [-57.273443009, 0.0]] + [[0.0, 0.0]] * 11

_E3 = [[0.0, 0.0]] * 4 + \
      [[1.0, 0.0],
       [-1.0, 0.0],
       [1.0, 0.0],
       [-1.0, 0.0],
       [0.0, 1.0],
       [0.0, -1.0],
       [0.0, 1.0],
       [0.0, -1.0]] + [[0.0, 0.0]] * 13

_E4 = [[0.0, 0.152993521, -0.713114094],
       [0.0, -0.152993521, 0.713114094],
       [0.0, 0.0, 0.0],
       [0.0, 0.0, 0.0],
       [0.0, 0.0, 0.0],
       [0.0, 0.0, 0.0],
       [-0.000424, -0.173399999, 0.806695],
       [0.000424, 0.173399999, -0.806695],
       [0.0, 0.0, 0.0],
       [0.0, 0.0, 0.0],
       [5.82575e-6, 0.002377759, -0.011079999],
       [-5.82575e-6, -0.002377759, 0.011079999],
       [0.0, 0.152993521, -0.713114094],
       [0.0, -0.152993521, 0.713114094],
       [-1.0, 0.0, 0.0],
       [1.0, 0.0, 0.0],
       [0.0, 0.0, 0.0],
       [0.0, -0.719942405, 3.355704698],
       [0.0, 0.0, 0.0],
       [0.0, 0.0, 0.0],
       [0.0, -10.0, 0.0],
       [0.0, 10.0, 0.0],
       [0.0, 0.0, -1.0],
       [0.0, 0.0, 1.0],
       [0.0, 0.0, 0.0]]

_E5 = [-0.61532, 57.888762009, 1.0, -1.0, 0.0, 0.0,
       59.558523999, 88.586529999, 0.0, 0.0,
       1.216723605, 0.817065082, 72.841344601, 0.615319,
       176.0, 20.0, 40.0, 0.0, 0.193439319, -0.193439319,
       2500.0, 100.0, 100.0, 20.0, 40.0]


def build_traction(gamma=0.95, epsilon=1e-9):
    """System and cost for the traction benchmark.

    The state weight is SLIP_WEIGHT * S_X S_X', so only slip error is
    penalized; the input weight is diag(0.1, 0).  Both are shifted by
    epsilon inside StageCost to stay positive definite.  The goal state
    is the canonical slip-target point with zero torque memory and zero
    engine speed.
    """
    sys = MldSystem(A=_A, B1=_B1, B2=_B2, B3=_B3,
                    E1=_E1, E2=_E2, E3=_E3, E4=_E4, E5=_E5)
    Q = SLIP_WEIGHT * np.outer(S_X, S_X)
    R = np.diag([0.1, 0.0])
    x_g = lift_slip(DELTA_OMEGA_GOAL)
    u_g = np.array([0.0, MU_S_GOAL])
    cost = StageCost(Q=Q, R=R, x_g=x_g, u_g=u_g, gamma=gamma, epsilon=epsilon)
    return sys, cost


def slip(x):
    """Wheel slip of a state (or of each row of a stack of states)."""
    return np.asarray(x, dtype=float) @ S_X


def lift_slip(s):
    """Canonical state with the requested slip: zero torque memory and
    engine speed, vehicle-speed coordinate carrying all of it."""
    return np.array([0.0, 0.0, float(s) / S_X[2]])
