from __future__ import annotations

import csv
import dataclasses

import numpy as np
import pytest

from app.errors import AssemblyError, RangeError
from app.fragility import (
    CSV_HEADER,
    FragilitySurface,
    assemble_surface,
    export,
    extract_curve,
    load_surface,
)


@pytest.fixture(scope="module")
def surface(linear_surface):
    _, grid = linear_surface
    return assemble_surface(grid, dense_resolution=5)


def test_dense_axes_keep_coarse_nodes(surface):
    assert np.allclose(surface.intensity, [1.0, 1.25, 1.5, 1.75, 2.0])
    assert np.allclose(surface.threshold, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert surface.values.shape == (5, 5)
    assert np.all((surface.values >= 0.0) & (surface.values <= 1.0))


def test_node_values_are_exact(linear_surface, surface):
    _, grid = linear_surface
    for (i, j), node in grid.nodes.items():
        t = int(np.flatnonzero(np.isclose(surface.threshold, grid.eps_axis[i]))[0])
        x = int(np.flatnonzero(np.isclose(surface.intensity, grid.xi_axis[j]))[0])
        assert surface.values[t, x] == node.probability


def test_assembly_spends_no_calls(linear_surface):
    problem, grid = linear_surface
    before = problem.calls
    assemble_surface(grid, dense_resolution=7)
    assert problem.calls == before


def test_metadata(surface):
    assert surface.provenance == "IS-I exact-reweighting"
    assert surface.metadata["method"] == "is1"
    assert surface.metadata["grid_shape"] == [3, 3]
    assert "yield_displacement_m" not in surface.metadata


def test_incomplete_grid_is_refused(linear_surface):
    _, grid = linear_surface
    partial = dataclasses.replace(grid, nodes={k: v for k, v in grid.nodes.items() if k != (2, 2)})
    with pytest.raises(AssemblyError) as exc:
        assemble_surface(partial)
    assert exc.value.missing == [(2, 2)]


def test_extract_curve(surface):
    exact = extract_curve(surface, 0.5)
    assert np.array_equal(exact.probability, surface.values[2])
    assert np.array_equal(exact.intensity, surface.intensity)
    mid = extract_curve(surface, 0.6)
    assert np.allclose(mid.probability, 0.6 * surface.values[2] + 0.4 * surface.values[3])
    with pytest.raises(RangeError):
        extract_curve(surface, 1.5)


def test_surface_csv(surface, tmp_path):
    path = export(surface, "csv", tmp_path / "surface.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + 25
    assert float(rows[1][0]) == surface.intensity[0]
    assert float(rows[1][1]) == surface.threshold[0]


def test_curve_csv(surface, tmp_path):
    path = export(extract_curve(surface, 0.25), "csv", tmp_path / "curve.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 5
    assert {r[1] for r in rows[1:]} == {"0.25"}


def test_empty_surface_csv_has_header_only(tmp_path):
    empty = FragilitySurface(np.array([]), np.array([]), np.zeros((0, 0)), "empty")
    path = export(empty, "csv", tmp_path / "empty.csv")
    assert path.read_text().strip() == ",".join(CSV_HEADER)


def test_json_round_trip(surface, tmp_path):
    path = export(surface, "json", tmp_path / "surface.json")
    assert load_surface(path) == surface


def test_export_formats(surface, tmp_path):
    with pytest.raises(ValueError):
        export(surface, "xml", tmp_path / "x")
    with pytest.raises(ValueError):
        export(extract_curve(surface, 0.5), "json", tmp_path / "x")
