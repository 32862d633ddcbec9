import numpy as np
import pytest
from PIL import Image

from maskface.landmark import save_landmarks, synthetic_face
from maskface.maskwarp import default_library


@pytest.fixture(scope="session")
def lib():
    return default_library()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_face_image(path, faces, size=(200, 200), fill=150):
    """Solid RGB image at `path` plus a landmark sidecar when `faces` is non-empty."""
    w, h = size
    Image.fromarray(np.full((h, w, 3), fill, np.uint8)).save(path)
    if faces:
        save_landmarks(path.with_suffix(".json"), faces, path.name)


def one_face(cx=100.0, cy=100.0, scale=55.0, roll=0.0):
    return synthetic_face((cx, cy), scale, roll_deg=roll)


def make_tree(root, n, no_face=(), faces_per_image=1):
    root.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        sub = root / f"id{i % 3}"
        sub.mkdir(exist_ok=True)
        faces = [] if i in no_face else [
            synthetic_face((100 + 200 * k, 100), 50, roll_deg=(i * 7) % 50 - 25) for k in range(faces_per_image)
        ]
        write_face_image(sub / f"img{i:03d}.png", faces, size=(200 * faces_per_image, 200), fill=40 + i)


def output_files(out):
    return {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != "manifest.csv"}


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""

    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
