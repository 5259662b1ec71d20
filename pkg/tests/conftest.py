import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from surfelseg import Camera, Scene, Surfel
from surfelseg.scene import SemanticDecoder
from surfelseg.synthgen import generate_scene

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def facing_camera(z=5.0, f=100.0, size=256):
    """Camera at (0, 0, z) looking down -z at the origin."""
    return Camera(fx=f, fy=f, cx=128.0, cy=128.0, width=size, height=size,
                  rotation=np.diag([1.0, -1.0, -1.0]), translation=np.array([0.0, 0.0, z]))


def make_surfel(center=(0, 0, 0), tu=(1, 0, 0), tv=(0, 1, 0), scales=(1, 1), opacity=0.5,
                rgb=(1, 0, 0), sem_dim=4, ins_dim=2):
    return Surfel(center=np.array(center, float), tangent_u=np.array(tu, float),
                  tangent_v=np.array(tv, float), scale_u=scales[0], scale_v=scales[1],
                  opacity=opacity, rgb=np.array(rgb, float),
                  sem_feature=np.zeros(sem_dim), ins_feature=np.zeros(ins_dim))


def random_scene(seed, n=300, width=128, height=128, sem_dim=4):
    """Random in-frustum surfels in front of a camera at the origin looking down +z."""
    rng = np.random.default_rng(seed)
    centers = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), rng.uniform(2.5, 8, n)])
    a = rng.normal(size=(n, 3))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = rng.normal(size=(n, 3))
    b -= (b * a).sum(1, keepdims=True) * a
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    scales = rng.uniform(0.02, 0.25, size=(n, 2))
    ncls = sem_dim
    decoder = SemanticDecoder(np.eye(ncls, sem_dim), np.zeros(ncls), tuple(f"c{i}" for i in range(ncls)),
                              np.array([i % 2 == 1 for i in range(ncls)]))
    m = 3
    scene = Scene(
        centers=centers, tangent_u=a, tangent_v=b, scales=scales,
        opacity=rng.uniform(0.05, 1.0, n), rgb=rng.uniform(0, 1, (n, 3)),
        sem_features=rng.normal(size=(n, sem_dim)), ins_features=rng.normal(size=(n, 2)),
        query_centers=rng.uniform(-2, 2, (m, 3)) + [0, 0, 5],
        query_covariances=np.stack([np.eye(3) * rng.uniform(0.5, 2)] * m),
        query_features=rng.normal(size=(m, 2)) * 3, decoder=decoder,
    )
    camera = Camera(fx=90.0, fy=90.0, cx=width / 2, cy=height / 2, width=width, height=height,
                    rotation=np.eye(3), translation=np.zeros(3))
    return scene, camera


@pytest.fixture(scope="session")
def room():
    return generate_scene("room", 3000, 6, 1)


@pytest.fixture(scope="session")
def stack():
    return generate_scene("stack", 2400, 4, 1)


@pytest.fixture(scope="session")
def thin():
    return generate_scene("thin", 800, 6, 1)


@pytest.fixture(scope="session")
def small_room():
    return generate_scene("room", 1200, 4, 5)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """List that acceptance tests append their verdict lines to."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
