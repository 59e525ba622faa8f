from __future__ import annotations

from pathlib import Path

import pytest

from oaas.config import PlatformConfig
from oaas.service import Platform

DATA = Path(__file__).parent / "data"

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_acceptance(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"{status}  {name}{suffix}")

STUB_IMAGES = (
    "img/resize",
    "img/change-format",
    "img/detect-object",
    "stub/inc",
    "stub/sleep",
    "stub/json-random",
    "stub/echo",
    "stub/fail",
)

COUNTER_YAML = """
classes:
  - name: Counter
    functions:
      - name: inc
        image: stub/inc
      - name: echo
        image: stub/echo
"""


def build_platform(tmp_path, **overrides) -> Platform:
    cfg = PlatformConfig(data_dir=str(tmp_path / "data"), secret="test-secret", **overrides)
    platform = Platform(cfg)
    endpoint = platform.register_stub_runtime()
    for image in STUB_IMAGES:
        platform.registry.register_image(image, endpoint)
    return platform


@pytest.fixture
def listing_yaml() -> str:
    return (DATA / "image_classes.yaml").read_text()


@pytest.fixture
def platform(tmp_path):
    p = build_platform(tmp_path)
    yield p
    p.stop()


@pytest.fixture
def deployed_platform(platform, listing_yaml):
    platform.deploy_text(listing_yaml)
    platform.deploy_text(COUNTER_YAML)
    return platform
