"""Regenerate the bundled low-visibility fringe (visibility 0.022, mean-half scale).

Usage: python scripts/make_reference_fringe.py [output.csv]
"""

import sys
from pathlib import Path

import numpy as np

from qkdphase.fringe import FringeDataset, Normalization

VISIBILITY = 0.022
PHI0 = 0.3
NOISE_RMS = 0.002
SEED = 20240601


def main(out=None):
    rng = np.random.default_rng(SEED)
    phi = np.linspace(0.0, 2 * np.pi, 81)
    intensity = 0.5 * (1 + VISIBILITY * np.cos(phi + PHI0)) + rng.normal(0.0, NOISE_RMS, phi.size)
    data = FringeDataset(phi, intensity, None, Normalization.RAW)
    target = Path(out) if out else Path(__file__).resolve().parents[1] / "src/qkdphase/data/reference_fringe.csv"
    data.to_csv(target)
    print(target)


if __name__ == "__main__":
    main(*sys.argv[1:])
