import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import dense_solve

from weakfind.errors import InputError
from weakfind.fem import compute_strains, element_stiffness
from weakfind.fixtures import face_load, patch_alpha
from weakfind.sensing import (
    MeasurementSet,
    Sensor,
    SensorSet,
    format_measurements,
    format_sensors,
    parse_measurements,
    parse_sensors,
    read_sensors,
    reading_operator,
    resolve_sensors,
    synthesize_measurements,
)


def _sensors(*specs, **kw):
    return SensorSet(tuple(Sensor(i + 1, k, p, c) for i, (k, p, c) in enumerate(specs)), **kw)


def test_sensor_on_node_has_unit_weight(plate):
    n = 40
    s = resolve_sensors(plate, _sensors(("displacement", tuple(plate.nodes[n]), ("ux",)))).sensors[0]
    nodes = plate.elements[s.element]
    assert dict(zip(nodes.tolist(), s.weights))[n] == pytest.approx(1.0, abs=1e-12)


def test_sensor_at_centroid_has_equal_weights(thick_small):
    s = resolve_sensors(thick_small, _sensors(("displacement", tuple(thick_small.centroids[17]), ("uz",)))).sensors[0]
    assert s.element == 17
    np.testing.assert_allclose(s.weights, 0.25, atol=1e-12)


def test_sensor_outside_mesh(plate):
    with pytest.raises(InputError, match="sensor 1"):
        resolve_sensors(plate, _sensors(("strain", (30.0, 15.0, 0.0), ("exx",))))


def test_component_validation(plate):
    with pytest.raises(InputError):
        Sensor(1, "strain", (0, 0, 0), ("ux",))
    with pytest.raises(InputError):
        Sensor(1, "displacement", (0, 0, 0), ("ux", "ux"))
    with pytest.raises(InputError, match="not available"):
        resolve_sensors(plate, _sensors(("strain", (10.0, 3.0, 0.0), ("ezz",))))
    with pytest.raises(InputError, match="constrained"):
        resolve_sensors(plate, _sensors(("displacement", (10.0, 3.0, 0.0), ("uz",))))
    with pytest.raises(InputError, match="duplicate"):
        SensorSet((Sensor(1, "strain", (0, 0, 0), ("exx",)), Sensor(1, "strain", (1, 0, 0), ("eyy",))))


def test_readings_match_dense_oracle(plate, mat):
    sensors = resolve_sensors(plate, _sensors(
        ("displacement", (47.3, 21.9, 0.0), ("ux", "uy")),
        ("strain", (12.0, 4.0, 0.0), ("exx", "eyy", "gxy")),
    ))
    Ke = element_stiffness(plate, mat)
    alpha = patch_alpha(plate, (40.0, 10.0), 6.0, 0.3)
    u = dense_solve(plate, Ke, face_load(plate, 0, 60.0, (1e5, 2e4, 0)).vector(plate), alpha).reshape(-1, 3)
    ms = synthesize_measurements(plate, mat, alpha, [face_load(plate, 0, 60.0, (1e5, 2e4, 0))], sensors)
    s1, s2 = sensors.sensors
    exp_u = np.asarray(s1.weights) @ u[plate.elements[s1.element]]
    exp_e = compute_strains(plate, u)[s2.element]
    scale = np.abs(u).max()
    assert ms.values[(1, 1, "ux")] == pytest.approx(exp_u[0], abs=1e-9 * scale)
    assert ms.values[(1, 1, "uy")] == pytest.approx(exp_u[1], abs=1e-9 * scale)
    for i, c in enumerate(("exx", "eyy", "gxy")):
        assert ms.values[(1, 2, c)] == pytest.approx(exp_e[i], rel=1e-8, abs=1e-12 * np.abs(exp_e).max())


def test_operator_agrees_with_direct_reading(thick_small, rng):
    sensors = resolve_sensors(thick_small, _sensors(
        ("displacement", tuple(thick_small.centroids[3] + [0.1, 0, 0]), ("ux", "uz")),
        ("strain", tuple(thick_small.centroids[200]), ("exx", "gyz", "gzx")),
    ))
    u = rng.normal(size=(thick_small.n_nodes, 3))
    direct = read_sensors(thick_small, u, compute_strains(thick_small, u), sensors)
    via_P = reading_operator(thick_small, sensors) @ u.ravel()
    np.testing.assert_allclose(via_P, [direct[k] for k in sensors.keys], rtol=1e-12, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_readings_are_linear(a, b):
    from weakfind.fixtures import rectangle_mesh

    m = rectangle_mesh(4, 2, 4.0, 2.0)
    sensors = resolve_sensors(m, _sensors(("displacement", (2.3, 0.7, 0), ("ux", "uy")), ("strain", (3.1, 1.6, 0), ("gxy",))))
    gen = np.random.default_rng(7)
    u1, u2 = gen.normal(size=(2, m.n_nodes, 3))
    P = reading_operator(m, sensors)
    np.testing.assert_allclose(P @ (a * u1 + b * u2).ravel(), a * (P @ u1.ravel()) + b * (P @ u2.ravel()), atol=1e-10)


def test_strain_sensor_constant_within_element(plate, rng):
    e = 250
    nodes = plate.nodes[plate.elements[e]]
    pts = [rng.dirichlet(np.ones(3)) @ nodes for _ in range(2)]
    ss = resolve_sensors(plate, _sensors(*[("strain", tuple(p), ("exx", "gxy")) for p in pts]))
    assert [s.element for s in ss] == [e, e]
    P = reading_operator(plate, ss).toarray()
    np.testing.assert_array_equal(P[:2], P[2:])


def test_uniform_stretch_reads_unit_strain(cube):
    u = np.column_stack([cube.nodes[:, 0], np.zeros(cube.n_nodes), np.zeros(cube.n_nodes)])
    ss = resolve_sensors(cube, _sensors(("strain", (0.4, 0.3, 0.6), ("exx", "eyy", "gxy")),
                                        ("displacement", (1.5, 0.5, 0.5), ("ux",))))
    r = read_sensors(cube, u, compute_strains(cube, u), ss)
    assert r[(1, "exx")] == pytest.approx(1.0, abs=1e-12)
    assert abs(r[(1, "eyy")]) < 1e-12 and abs(r[(1, "gxy")]) < 1e-12
    assert r[(2, "ux")] == pytest.approx(1.5, abs=1e-12)


def test_sensor_file_roundtrip():
    text = "# two sensors\n3 strain 1.5 2 0 exx,gxy\n7 displacement 0.1 0.2 0.3 uz  # tip\n"
    ss = parse_sensors(text, u0=1e-9, s0=1e-12)
    assert ss.ids == [3, 7] and ss.keys == [(3, "exx"), (3, "gxy"), (7, "uz")]
    assert ss.threshold("uz") == 1e-9 and ss.threshold("gxy") == 1e-12
    assert parse_sensors(format_sensors(ss)).sensors == ss.sensors


@pytest.mark.parametrize("text", ["1 strain 0 0 exx\n", "1 gauge 0 0 0 exx\n", "x strain 0 0 0 exx\n",
                                  "1 strain 0 0 0 foo\n"])
def test_sensor_parse_errors(text):
    with pytest.raises(InputError, match="line 1"):
        parse_sensors(text)


def test_negative_threshold_rejected():
    with pytest.raises(InputError):
        SensorSet((), u0=-1.0)


def test_measurement_roundtrip_is_exact(rng):
    vals = {(c, s, comp): float(rng.normal() * 10.0 ** rng.integers(-12, 3))
            for c in (1, 2) for s in (4, 9) for comp in ("uy", "ux", "exx")}
    ms = MeasurementSet(vals)
    text = format_measurements(ms)
    assert text.splitlines()[0].startswith("1 4 ux ")
    assert parse_measurements(text).values == vals
    assert format_measurements(parse_measurements(text)) == text


@pytest.mark.parametrize("text, match", [("1 2 ux\n", "line 1"), ("1 2 ux 1.0\n1 2 ux 2.0\n", "line 2: duplicate"),
                                         ("1 two ux 1\n", "line 1")])
def test_measurement_parse_errors(text, match):
    with pytest.raises(InputError, match=match):
        parse_measurements(text)


def test_measurement_check(strip):
    ss = _sensors(("displacement", (3.0, 1.0, 0.0), ("ux",)))
    loads = [face_load(strip, 0, 6.0, (1e5, 0, 0), 1)]
    MeasurementSet({(1, 1, "ux"): 1.0}).check(loads, ss)
    with pytest.raises(InputError, match="load case 2"):
        MeasurementSet({(2, 1, "ux"): 1.0}).check(loads, ss)
    with pytest.raises(InputError, match="undeclared"):
        MeasurementSet({(1, 1, "uy"): 1.0}).check(loads, ss)


def test_synth_noise_is_seeded(strip, mat):
    ss = _sensors(("displacement", (3.0, 1.0, 0.0), ("ux", "uy")), ("strain", (5.5, 0.5, 0), ("exx",)))
    loads = [face_load(strip, 0, 6.0, (1e5, -1e4, 0), 1)]
    alpha = np.ones(strip.n_elements)
    clean = synthesize_measurements(strip, mat, alpha, loads, ss)
    a = synthesize_measurements(strip, mat, alpha, loads, ss, 0.01, np.random.default_rng(3))
    b = synthesize_measurements(strip, mat, alpha, loads, ss, 0.01, np.random.default_rng(3))
    c = synthesize_measurements(strip, mat, alpha, loads, ss, 0.01, np.random.default_rng(4))
    assert a.values == b.values != c.values
    for k, v in clean.values.items():
        assert abs(a.values[k] - v) <= 0.01 * abs(v) + 1e-300
    assert clean.provenance == "synthetic"
