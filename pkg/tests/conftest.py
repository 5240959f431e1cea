import pytest
import torch


def _randomize(module: torch.nn.Module, std: float = 0.2, seed: int = 0) -> torch.nn.Module:
    """Replace every parameter with Gaussian noise, so zero-initialized
    output layers do not mask upstream gradients."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g) * std)
    return module


@pytest.fixture
def randomize():
    return _randomize


CRITERIA = {
    1: "gradient integrity",
    2: "numerical oracles",
    3: "codec reconstruction",
    4: "overfit end-to-end",
    5: "conditioning liveness",
    6: "jitter removal",
    7: "schedule statistics",
    8: "metric self-consistency",
    9: "reproducibility",
    10: "ablation harness",
}
_acceptance: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store the outcome of one acceptance criterion for the session summary."""

    def _record(number: int, passed: bool, detail: str) -> bool:
        _acceptance[number] = (bool(passed), detail)
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance")
    for number, name in CRITERIA.items():
        if number in _acceptance:
            passed, detail = _acceptance[number]
            status = "PASS" if passed else "FAIL"
        else:
            status, detail = "FAIL", "no result recorded (deselected or errored)"
        terminalreporter.write_line(f"criterion {number:2d} {name:24s} {status}  {detail}")
