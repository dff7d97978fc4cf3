import hypothesis
import numpy as np
import pytest
from fractions import Fraction as F

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.load_profile("ci")

# exact-arithmetic pivot sets for two reference goals
GOLDEN_GOAL_A = dict(R_c=1.7, Z_c=0.0, a=0.6, z_max=1.0, delta_u=0.5, R_x=1.5, Z_x=-1.1,
                     xi_TI=0.3, xi_TO=0.3, xi_BI=0.3, xi_BO=0.3)
GOLDEN_PIVOTS_A = [
    (F(3, 2), F(-11, 10)), (F(31, 25), F(-143, 200)), (F(11, 10), F(0)), (F(241, 200), F(13, 20)),
    (F(7, 5), F(1)), (F(397, 200), F(13, 20)), (F(23, 10), F(0)), (F(101, 50), F(-143, 200)),
]
GOLDEN_GOAL_B = dict(R_c=1.75, Z_c=0.05, a=0.55, z_max=0.9, delta_u=0.4, R_x=1.45, Z_x=-1.2,
                     xi_TI=0.1, xi_TO=-0.2, xi_BI=0.25, xi_BO=0.0)
GOLDEN_PIVOTS_B = [
    (F(29, 20), F(-6, 5)), (F(207, 160), F(-117, 160)), (F(6, 5), F(1, 20)), (F(2697, 2000), F(207, 400)),
    (F(153, 100), F(9, 10)), (F(919, 500), F(39, 100)), (F(23, 10), F(1, 20)), (F(15, 8), F(-23, 40)),
]


def random_goal_vector(rng, n=None):
    """Valid goals drawn well inside the invariant region."""
    size = () if n is None else (n,)
    R_c = rng.uniform(1.2, 2.2, size)
    a = rng.uniform(0.2, 0.9, size) * (R_c - 0.05) / 1.0
    a = np.minimum(a, R_c - 0.05)
    Z_c = rng.uniform(-0.3, 0.3, size)
    z_max = Z_c + rng.uniform(0.2, 1.2, size)
    d_u = rng.uniform(-0.5, 1.0, size)
    R_x = rng.uniform(1.0, 2.0, size)
    Z_x = Z_c - rng.uniform(0.2, 1.5, size)
    xis = rng.uniform(-1, 1, size + (4,))
    base = np.stack([R_c, Z_c, a, z_max, d_u, R_x, Z_x], -1)
    return np.concatenate([base, xis], -1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
