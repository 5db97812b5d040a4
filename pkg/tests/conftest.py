import pytest

from effect_fusion.gibbs import SamplerConfig, run_chain
from effect_fusion.prior import HyperParams
from effect_fusion.simstudy import SimulationDesign, generate_dataset


@pytest.fixture(scope="session")
def sim_chain():
    """Default-settings chain on replicate 0 of the eight-covariate simulation."""
    sim = SimulationDesign()
    data = generate_dataset(sim, 0)
    hyper = [HyperParams.default_for(s.scale) for s in sim.specs]
    return data, run_chain(data.design, data.y, hyper, SamplerConfig(seed=0))


_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one line per acceptance criterion, then fail the test if it did not pass."""
    def record(number: int, ok: bool, detail: str) -> None:
        _VERDICTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
