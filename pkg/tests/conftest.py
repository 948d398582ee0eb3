import numpy as np
import pytest
from hypothesis import settings

from diffcls.diffusion import Condition, GaussianDenoiser, ScoreModel, make_world

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60)
settings.load_profile("repo")

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    """Store one acceptance result so the session summary can print it."""
    def _record(k: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    return _record


class ConstantModel(ScoreModel):
    """Ignores the condition: returns a fixed fraction of x_t."""

    def denoise(self, x_t, t, condition):
        return 0.5 * np.asarray(x_t)


class PlantedModel(ScoreModel):
    """Each class returns ``x0 + offsets[class_id]`` regardless of the noise."""

    def __init__(self, x0, offsets):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.offsets = {k: np.asarray(v, dtype=np.float64) for k, v in offsets.items()}

    def denoise(self, x_t, t, condition):
        return self.x0 + self.offsets[condition.class_id]


def conditions(k):
    return [Condition(i, f"class {i}") for i in range(k)]


@pytest.fixture(scope="session")
def world10():
    return make_world(10, 16, 1.0, 6.0, np.random.default_rng(1234))


@pytest.fixture(scope="session")
def oracle10(world10):
    return GaussianDenoiser(world10)
