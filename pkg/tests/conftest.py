import dataclasses

import hypothesis
import pytest

from scmqkd.core import (
    CrosstalkParams, FilterParams, LinkParams, ReferenceChannelParams, SubcarrierParams,
    SystemConfig, WavelengthChannel, paper_baseline,
)

hypothesis.settings.register_profile("default", max_examples=100, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def baseline():
    return paper_baseline()


def ideal_config(n_subcarriers=1, visibility=1.0, **overrides):
    """rho = mu = T = V = 1 with every noise source switched off."""
    cfg = SystemConfig(
        wavelength_channels=[WavelengthChannel(1550.0, [SubcarrierParams(10.0 + 5.0 * i) for i in range(n_subcarriers)])],
        detectors=dataclasses.replace(paper_baseline().detectors, efficiency=1.0, dark_count_prob=0.0),
        link=LinkParams(fiber_loss_db=0.0, bob_loss_db=0.0, cwdm_insertion_db=0.0, dcf_residual_ps_nm=0.0),
        reference=ReferenceChannelParams(raman_coefficient_per_w_per_gate=0.0),
        filter=FilterParams(extinction_db=300.0, insertion_loss_db=0.0),
        crosstalk=CrosstalkParams(imd_level_db=300.0, phn_scale=0.0),
        visibility=visibility,
    )
    return cfg.replace(**overrides) if overrides else cfg


@pytest.fixture
def ideal():
    return ideal_config()


@pytest.fixture(scope="session")
def baseline_run():
    """The 10^7-pulse baseline session (seed 1), shared by several modules."""
    import time

    from scmqkd.sifting import sift_session
    from scmqkd.simulator import SessionSpec, run_session

    t0 = time.perf_counter()
    log = run_session(SessionSpec(paper_baseline(), 10_000_000, 1))
    result = sift_session(log)
    return log, result, time.perf_counter() - t0


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
