import numpy as np
import pytest

from scantex.imgcore import ImageBuffer


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_image(rng, h=48, w=40, channels=3):
    """Low-frequency random image (bilinear upsampling of a coarse grid)."""
    import cv2

    coarse = rng.uniform(20, 235, size=(max(h // 8, 2), max(w // 8, 2), channels))
    big = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_LINEAR)
    big = big.reshape(h, w, channels)
    return ImageBuffer(np.clip(np.rint(big), 0, 255).astype(np.uint8))


def constant_image(value, h=64, w=64, channels=3):
    return ImageBuffer(np.full((h, w, channels), value, dtype=np.uint8))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
