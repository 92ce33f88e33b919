import pytest

from d2du.model import DensityVector, NetworkConfig


@pytest.fixture(scope="session")
def cfg():
    return NetworkConfig()


@pytest.fixture(scope="session")
def ref_densities():
    # moderate load used throughout the shape and validation checks
    return DensityVector(5e-5, 5e-5, 1e-4, 1e-4, 3e-5)


def report_line(name: str, ok: bool, detail: str = "") -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
