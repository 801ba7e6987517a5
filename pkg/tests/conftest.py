import math

import pytest

from clearkit.cavity import calibrate_drive
from clearkit.core import reference_params
from clearkit.design import ClearSpec, solve_clear


@pytest.fixture(scope="session")
def params():
    return reference_params()


@pytest.fixture(scope="session")
def linear_params(params):
    return params.replace(kerr=0.0)


@pytest.fixture(scope="session")
def cal(params):
    return calibrate_drive(params)


def clear_spec(params, p_norm, t_dn=0.15, t_up=0.15, t_flat=1.7):
    eps = calibrate_drive(params).eps_for(p_norm)
    spec = ClearSpec(eps, t_up1=t_up, t_up2=t_up, t_flat=t_flat, t_dn1=t_dn, t_dn2=t_dn)
    return solve_clear(params, spec).spec


TWO_PI = 2 * math.pi
