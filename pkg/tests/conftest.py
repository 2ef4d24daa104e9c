import numpy as np
import pytest

from bmtrunc import (
    BmapModel,
    MuRule,
    build_generator,
    corollary_transform,
    find_beta_no_disaster,
    find_constants_disaster,
    lc_truncate,
    stationary,
)

REF_LEVEL = 200


@pytest.fixture(scope="session")
def mm1():
    """Single-phase queue with arrival rate 1 and service rate 2."""
    return BmapModel(d=1, D=(np.array([[-1.0]]), np.array([[1.0]])),
                     mu=MuRule(table=(2.0,)), psi=0.0)


def _d2_blocks():
    D0 = np.array([[-1.95, 0.7], [0.8, -1.95]])
    D1 = np.array([[0.5, 0.2], [0.3, 0.3]])
    D2 = np.array([[0.25, 0.1], [0.2, 0.15]])
    D3 = np.array([[0.15, 0.05], [0.1, 0.1]])
    return (D0, D1, D2, D3)


@pytest.fixture(scope="session")
def d2_psi0():
    """Two-phase batch arrivals, level-dependent service, no catastrophes."""
    return BmapModel(d=2, D=_d2_blocks(),
                     mu=MuRule(table=(3.0, 3.5), eventual="constant", value=3.5),
                     psi=0.0)


@pytest.fixture(scope="session")
def d2_psi05():
    """Same queue with catastrophe rate 0.5 back to the empty level."""
    return BmapModel(d=2, D=_d2_blocks(),
                     mu=MuRule(table=(3.0, 3.5), eventual="constant", value=3.5),
                     psi=0.5)


@pytest.fixture(scope="session")
def pure_disaster():
    """No service at all: every departure is a catastrophe reset."""
    return BmapModel(d=2, D=_d2_blocks(), mu=MuRule(table=(0.0,)), psi=1.0)


@pytest.fixture(scope="session")
def fleet(mm1, d2_psi0, d2_psi05):
    return {"mm1": mm1, "d2": d2_psi0, "d2_disaster": d2_psi05}


@pytest.fixture(scope="session")
def fleet_models(fleet):
    return {name: build_generator(B) for name, B in fleet.items()}


@pytest.fixture(scope="session")
def fleet_certs(fleet, fleet_models):
    """Level-0 drift certificate for each fleet member, computed once."""
    out = {}
    for name, B in fleet.items():
        if B.psi == 0.0:
            cert = find_beta_no_disaster(B)
        else:
            raw = find_constants_disaster(B)
            cert = raw if raw.K == 0 else corollary_transform(raw, fleet_models[name])
        out[name] = cert
    return out


@pytest.fixture(scope="session")
def fleet_refs(fleet_models):
    """Reference stationary distributions at the deep truncation level."""
    return {
        name: stationary(lc_truncate(model, REF_LEVEL).matrix, source="lc")
        for name, model in fleet_models.items()
    }
