import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kspread import ModelSpec, OffspringLaw, validate_spec

# Frozen via the independent oracles in oracles.py (200-step bisection and
# fixed-point scans at 30-digit precision); see the solver tests that
# re-derive them.
THETA_MEAN2 = 1.5936242600400399        # root of 2(1 - e^-x) = x
W_MEAN2 = 0.7968121300200199            # = theta/2 for mean-2, beta=1
SIGMA_POIS2 = 0.2031878699799800        # fixed point of q = e^{2(q-1)}
VAR_TT_H1 = 2.6845672714463350
VAR_T_H1 = 1.0909430114062950
VAR_W_H1_PROOF = 0.2727357528515737
VAR_W_H1_DISPLAY = 1.8663600128916138
VAR_TT_POIS2 = 7.2069014349208203
VAR_T_POIS2 = 5.6132771748807803
VAR_W_POIS2_PROOF = 0.4594417230070376
VAR_W_POIS2_DISPLAY = 4.7376332544934127
THETA_J2 = 2.1580922828386135           # gamma=(.5,.5), beta=(1.2,.8), E=(2,3)
W_J2 = 0.8735238036852898
SIGMA_J2_SEED2 = 0.0009841064267583     # extinction prob for the type-2 seed


@pytest.fixture(scope="session")
def spec_h1() -> ModelSpec:
    """Homogeneous reference: one type, beta=1, capacity fixed at 2."""
    return validate_spec(
        ModelSpec(gamma=(1.0,), beta=(1.0,), offspring=(OffspringLaw.point_mass(2),), i0=0)
    )


@pytest.fixture(scope="session")
def spec_pois2() -> ModelSpec:
    return validate_spec(
        ModelSpec(gamma=(1.0,), beta=(1.0,), offspring=(OffspringLaw.poisson(2.0),), i0=0)
    )


@pytest.fixture(scope="session")
def spec_j2() -> ModelSpec:
    """Two types with unequal weights; seed sits in type 2 (zero-based 1)."""
    return validate_spec(
        ModelSpec(
            gamma=(0.5, 0.5),
            beta=(1.2, 0.8),
            offspring=(OffspringLaw.poisson(2.0), OffspringLaw.point_mass(3)),
            i0=1,
        )
    )


@pytest.fixture(scope="session")
def spec_j2_reduction() -> ModelSpec:
    """Collapses to the H1 duration equation: E = (1,3), beta = (1,1)."""
    return validate_spec(
        ModelSpec(
            gamma=(0.5, 0.5),
            beta=(1.0, 1.0),
            offspring=(OffspringLaw.point_mass(1), OffspringLaw.point_mass(3)),
            i0=0,
        )
    )


@pytest.fixture(scope="session")
def spec_critical() -> ModelSpec:
    """rho = 1: every vertex spreads exactly once."""
    return validate_spec(
        ModelSpec(gamma=(1.0,), beta=(1.0,), offspring=(OffspringLaw.point_mass(1),), i0=0)
    )
