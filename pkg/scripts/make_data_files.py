#!/usr/bin/env python3
"""Regenerate the bundled model files from the in-code builders."""

import pathlib

from qmpc.mld import save_model
from qmpc.toy1d import build_toy1d
from qmpc.traction import build_traction

DATA = pathlib.Path(__file__).resolve().parent.parent / "src" / "qmpc" / "data"


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    sys_, cost = build_toy1d()
    save_model(DATA / "toy1d.json", sys_, cost,
               meta={"name": "toy1d",
                     "description": "1-state piecewise-affine fixture: "
                                    "x+ = 0.9x + u + 0.2z, z = delta*x, "
                                    "delta = [x >= 0], |x| <= 10, |u| <= 1"})
    sys_, cost = build_traction()
    save_model(DATA / "traction.json", sys_, cost,
               meta={"name": "traction",
                     "description": "traction-control benchmark: 3 states, "
                                    "2 inputs, 2 modes, 25 MLD rows; goal "
                                    "slip 2 at the mode boundary"})
    print(f"wrote {DATA / 'toy1d.json'}")
    print(f"wrote {DATA / 'traction.json'}")


if __name__ == "__main__":
    main()
