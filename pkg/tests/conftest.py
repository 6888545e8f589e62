import numpy as np
import pytest

from qlayer.layer import LayerConfig
from qlayer.surfaces import make_surface

BUILTINS = {
    "plane": {},
    "hyperboloid": {"slope": 1.0, "width": 1.0},
    "bump": {"height": 1.0, "width": 1.0},
    "cap": {"slope": 1.0, "width": 1.0},
    "elliptic_bump": {"amplitude": 1.0, "wu": 1.0, "wv": 2.0},
}


@pytest.fixture(params=sorted(BUILTINS))
def builtin(request):
    return make_surface(request.param, **BUILTINS[request.param])


@pytest.fixture
def plane():
    return make_surface("plane")


@pytest.fixture
def hyperboloid():
    return make_surface("hyperboloid", slope=1.0, width=1.0)


@pytest.fixture
def bump():
    return make_surface("bump", height=1.0, width=1.0)


@pytest.fixture
def half():
    return LayerConfig(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_points(surface, n, rng, radius=None):
    """Parameter points spread over a few curvature scales."""
    R = 4 * surface.scale if radius is None else radius
    r = R * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    return r * np.cos(th), r * np.sin(th)


def random_field(rng, R, transverse=None):
    """p(u, v) (1 - r^2/R^2)^3 tau(t) with a random quadratic p and random tau."""
    from qlayer.forms import CartesianField, PolyCos, SineSeries, separable

    c = rng.normal(size=6)

    def parts(u, v):
        r2 = (u * u + v * v) / R**2
        inside = r2 < 1
        w = np.where(inside, (1 - r2) ** 3, 0.0)
        dw = np.where(inside, -6 * (1 - r2) ** 2 / R**2, 0.0)
        p = c[0] + c[1] * u + c[2] * v + c[3] * u * v + c[4] * u * u + c[5] * v * v
        return w, dw, p

    def fn(u, v):
        w, _, p = parts(u, v)
        return p * w

    def grad(u, v):
        w, dw, p = parts(u, v)
        return ((c[1] + c[3] * v + 2 * c[4] * u) * w + p * dw * u,
                (c[2] + c[3] * u + 2 * c[5] * v) * w + p * dw * v)

    if transverse is None:
        coeffs = tuple(rng.normal(size=3))
        transverse = SineSeries(coeffs) if rng.random() < 0.5 else PolyCos(coeffs)
    return separable(CartesianField(fn, grad, R), transverse)
