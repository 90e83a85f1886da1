import pytest

from scmqkd import experiments
from scmqkd.core import ConfigError, paper_wdm


def test_set_field_paths(baseline):
    assert experiments.set_field(baseline, "visibility", "0.9").visibility == 0.9
    assert experiments.set_field(baseline, "link.reference_active", "false").link.reference_active is False
    cfg = experiments.set_field(baseline, "subcarrier.mean_photon_number", 0.5)
    assert all(sc.mean_photon_number == 0.5 for sc in cfg.wavelength_channels[0].subcarriers)
    assert len(experiments.set_field(baseline, "subcarriers", "1").wavelength_channels[0].subcarriers) == 1
    assert len(experiments.set_field(paper_wdm(), "wavelengths", 1).wavelength_channels) == 1
    assert baseline.visibility == 0.96  # inputs untouched


@pytest.mark.parametrize("path, value", [
    ("nope", 1), ("link.nope", 1), ("subcarrier.nope", 1), ("subcarriers", 5), ("wavelengths", 3),
    ("visibility", "abc"), ("link.reference_active", "maybe"),
])
def test_set_field_errors(baseline, path, value):
    with pytest.raises(ConfigError):
        experiments.set_field(baseline, path, value)


def test_parse_assignment():
    assert experiments.parse_assignment("a.b=1, 2,3") == ("a.b", ["1", "2", "3"])
    with pytest.raises(ConfigError):
        experiments.parse_assignment("novalue")


def test_sweep_grid_product():
    pts = list(experiments.sweep_grid([("a", [1, 2]), ("b", [3, 4, 5])]))
    assert len(pts) == 6 and pts[0] == {"a": 1, "b": 3}


def test_sweep_rows_validates(baseline):
    with pytest.raises(ValueError):
        experiments.sweep_rows(baseline, [("visibility", ["1"])], mode="plot")
    with pytest.raises(ConfigError):
        experiments.sweep_rows(baseline, [("visibility", ["2"])])


def test_compare_rows_nan_qber_passes(ideal):
    cfg = ideal.replace(pulse_rate_hz=1e6)
    log, result = experiments.simulate(experiments.set_field(cfg, "subcarrier.mean_photon_number", 1e-9), 0, 100)
    rows = experiments.compare_rows(log, result)
    assert all(r["pass"] for r in rows)
