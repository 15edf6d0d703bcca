import os
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from maxent_retinex.core import save_image, to_uint8

sys.path.insert(0, str(Path(__file__).parent))


def synthetic_pair(rng: np.random.Generator, h=64, w=96):
    """(low, reference) 8-bit-representable float images of one made-up scene."""
    scene = np.zeros((h, w, 3))
    for _ in range(6):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = y0 + rng.integers(8, h // 2), x0 + rng.integers(8, w // 2)
        scene[y0:y1, x0:x1] += rng.uniform(0.1, 0.6, 3)
    scene += ndimage.gaussian_filter(rng.uniform(0, 0.4, (h, w, 3)), (4, 4, 0))
    scene = np.clip(scene / scene.max(), 0, 1)
    yy, xx = np.mgrid[0:h, 0:w]
    light = 0.12 + 0.15 * np.exp(-((yy - h / 3) ** 2 + (xx - w / 2) ** 2) / (2 * (w / 3) ** 2))
    low = scene * light[..., None] + rng.normal(0, 0.01, scene.shape)
    ref = np.clip(0.2 + 0.75 * scene, 0, 1)
    q = lambda x: to_uint8(np.clip(x, 0, 1)).astype(np.float32) / np.float32(255)
    return q(low), q(ref)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def synthetic_dirs(tmp_path):
    """Directory pair low/ and high/ with four synthetic images each."""
    rng = np.random.default_rng(7)
    low_dir, ref_dir = tmp_path / "low", tmp_path / "high"
    low_dir.mkdir()
    ref_dir.mkdir()
    for k in range(4):
        low, ref = synthetic_pair(rng)
        save_image(low, low_dir / f"{k}.png")
        save_image(ref, ref_dir / f"{k}.png")
    return low_dir, ref_dir


def lol_root():
    """LOL dataset root (``our485/`` and ``eval15/`` with ``low``/``high``), or None."""
    for cand in (os.environ.get("LOL_ROOT"), "/root/data/LOL", "/data/LOL", "./LOL"):
        if cand and (Path(cand) / "eval15" / "low").is_dir():
            return Path(cand)
    return None


# --- acceptance summary ---------------------------------------------------------

_criteria = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance verdict for the summary."""
    results = request.config.stash.setdefault(_criteria, {})

    def record(number: int, ok: bool, detail: str):
        results[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_criteria, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
