"""Tests for procedural map generation and the text map format."""

import numpy as np
import pytest
from scipy import ndimage

from symnav.config import Config
from symnav.mapgen import (FREE, OBSTACLE, GenerationError, MapGeneratorSpec,
                           OccupancyGrid, generate_map, load_map_text,
                           make_single_room, save_map_text, spec_for_suite)


@pytest.fixture(scope="module")
def cfg():
    return Config()


class TestGenerateMap:
    def test_deterministic_per_seed(self, cfg):
        a = generate_map(spec_for_suite(cfg, "iid", 5))
        b = generate_map(spec_for_suite(cfg, "iid", 5))
        assert np.array_equal(a.cells, b.cells)

    def test_different_seeds_differ(self, cfg):
        a = generate_map(spec_for_suite(cfg, "iid", 1))
        b = generate_map(spec_for_suite(cfg, "iid", 2))
        assert not np.array_equal(a.cells, b.cells)

    @pytest.mark.parametrize("suite", ["iid", "ood"])
    def test_free_area_within_suite_band(self, cfg, suite):
        lo = cfg[f"map.{suite}_area_min_m2"]
        hi = cfg[f"map.{suite}_area_max_m2"]
        for seed in range(8):
            grid = generate_map(spec_for_suite(cfg, suite, seed))
            assert lo <= grid.free_area_m2() <= hi

    def test_suite_bands_disjoint(self, cfg):
        assert cfg["map.iid_area_max_m2"] < cfg["map.ood_area_min_m2"]
        assert cfg["map.iid_rooms_max"] < cfg["map.ood_rooms_min"]

    def test_border_is_obstacle(self, cfg):
        grid = generate_map(spec_for_suite(cfg, "ood", 3))
        assert (grid.cells[0] == OBSTACLE).all()
        assert (grid.cells[-1] == OBSTACLE).all()
        assert (grid.cells[:, 0] == OBSTACLE).all()
        assert (grid.cells[:, -1] == OBSTACLE).all()

    @pytest.mark.parametrize("suite,seed", [("iid", 0), ("iid", 9), ("ood", 0), ("ood", 9)])
    def test_free_cells_single_component(self, cfg, suite, seed):
        grid = generate_map(spec_for_suite(cfg, suite, seed))
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        labels, count = ndimage.label(grid.cells == FREE, structure=structure)
        assert count == 1
        # flood fill from any free cell reaches all free cells
        first = tuple(np.argwhere(grid.cells == FREE)[0])
        assert labels[first] == 1

    def test_generation_error_for_impossible_band(self, cfg):
        spec = spec_for_suite(cfg, "iid", 0)
        impossible = MapGeneratorSpec(**{**spec.__dict__,
                                         "area_min_cells": 1, "area_max_cells": 2})
        with pytest.raises(GenerationError):
            generate_map(impossible, max_attempts=4)


class TestSingleRoom:
    def test_free_area(self):
        grid = make_single_room(64, 10, 12, 0.25)
        assert grid.free_mask().sum() == 120

    def test_must_fit(self):
        with pytest.raises(ValueError):
            make_single_room(16, 20, 20, 0.25)


class TestMapTextFormat:
    def test_round_trip(self, cfg, tmp_path):
        grid = generate_map(spec_for_suite(cfg, "ood", 4))
        path = tmp_path / "map.txt"
        save_map_text(path, grid)
        loaded = load_map_text(path)
        assert np.array_equal(loaded.cells, grid.cells)
        assert loaded.cell_size == grid.cell_size

    def test_header_layout(self, tmp_path):
        grid = make_single_room(16, 4, 4, 0.5)
        path = tmp_path / "map.txt"
        save_map_text(path, grid)
        lines = path.read_text().splitlines()
        assert lines[0] == "16 0.5"
        assert len(lines) == 17
        assert set(lines[1]) == {"#"}

    def test_bad_row_rejected(self, tmp_path):
        path = tmp_path / "map.txt"
        path.write_text("4 0.25\n####\n##\n####\n####\n")
        with pytest.raises(ValueError):
            load_map_text(path)


class TestOccupancyGridInvariants:
    def test_invariant_check_catches_open_border(self):
        cells = np.full((8, 8), OBSTACLE, dtype=np.uint8)
        cells[0, 3] = FREE
        cells[3:5, 3:5] = FREE
        grid = OccupancyGrid(cells, 0.25)
        with pytest.raises(ValueError):
            grid.check_invariants()

    def test_invariant_check_catches_split_components(self):
        cells = np.full((8, 8), OBSTACLE, dtype=np.uint8)
        cells[2, 2] = FREE
        cells[5, 5] = FREE
        grid = OccupancyGrid(cells, 0.25)
        with pytest.raises(ValueError):
            grid.check_invariants()
