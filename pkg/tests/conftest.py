import numpy as np
import pytest

from corrhash import kernels

KERNEL_NAMES = ("hamming_to_all", "topk_hamming", "topk_hamming_batch", "enumerate_log_mass",
                "mixture_logpmf")


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request, monkeypatch):
    """Run the test once per built kernel backend."""
    mod = kernels.available_backends()[request.param]
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(mod, "RESULTS", None):
            terminalreporter.section("acceptance criteria")
            for num in sorted(mod.RESULTS):
                terminalreporter.write_line(mod.RESULTS[num])
