"""Web-mercator projection, quadkeys, window planning, and tile stitching."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from soundscape_ml import tiles
from soundscape_ml.tiles import (
    CachingTileClient,
    FilesystemTileClient,
    HttpTileClient,
    TileCoord,
    TileError,
    fetch_and_stitch,
    global_pixel_to_latlon,
    latlon_to_global_pixel,
    plan_window,
    quadkey_to_tile,
    tile_to_quadkey,
)


class TestProjection:
    def test_map_center(self):
        assert latlon_to_global_pixel(0.0, 0.0, 1) == (256.0, 256.0)

    def test_left_edge(self):
        assert latlon_to_global_pixel(0.0, -180.0, 1) == (0.0, 256.0)

    def test_mercator_limit_clips_to_top_corner(self):
        px, py = latlon_to_global_pixel(85.05112878, -180.0, 1)
        assert px == 0.0
        assert py == pytest.approx(0.0, abs=1e-6)

    def test_latitude_out_of_range(self):
        with pytest.raises(ValueError, match="latitude"):
            latlon_to_global_pixel(86.0, 0.0, 5)

    def test_longitude_out_of_range(self):
        with pytest.raises(ValueError, match="longitude"):
            latlon_to_global_pixel(0.0, 180.0, 5)

    @given(
        lat=st.floats(-80.0, 80.0),
        lon=st.floats(-179.9, 179.9),
        zoom=st.integers(1, 23),
    )
    def test_roundtrip_within_micro_degrees(self, lat, lon, zoom):
        px, py = latlon_to_global_pixel(lat, lon, zoom)
        lat2, lon2 = global_pixel_to_latlon(px, py, zoom)
        # Clipping can bite at low zoom near the edges; these draws stay away.
        assert lat2 == pytest.approx(lat, abs=1e-6)
        assert lon2 == pytest.approx(lon, abs=1e-6)


class TestQuadkey:
    def test_origin_tile(self):
        assert tile_to_quadkey(TileCoord(0, 0, 1)) == "0"

    def test_bit_interleaving_case(self):
        # x = 011, y = 101 -> digits 2, 1, 3 from the most significant bit.
        assert tile_to_quadkey(TileCoord(3, 5, 3)) == "213"

    def test_inverse_of_known_key(self):
        assert quadkey_to_tile("213") == TileCoord(3, 5, 3)

    def test_invalid_digits_rejected(self):
        with pytest.raises(ValueError):
            quadkey_to_tile("0124")
        with pytest.raises(ValueError):
            quadkey_to_tile("")

    def test_bijection_on_ten_thousand_random_tiles(self):
        rng = np.random.default_rng(1234)
        for _ in range(10_000):
            zoom = int(rng.integers(1, 24))
            n = 1 << zoom
            tile = TileCoord(int(rng.integers(0, n)), int(rng.integers(0, n)), zoom)
            key = tile_to_quadkey(tile)
            assert len(key) == zoom
            assert quadkey_to_tile(key) == tile

    @given(st.integers(1, 23), st.data())
    def test_bijection_property(self, zoom, data):
        n = 1 << zoom
        tile = TileCoord(
            data.draw(st.integers(0, n - 1)), data.draw(st.integers(0, n - 1)), zoom
        )
        assert quadkey_to_tile(tile_to_quadkey(tile)) == tile

    def test_tile_bounds_validated(self):
        with pytest.raises(ValueError):
            TileCoord(2, 0, 1)
        with pytest.raises(ValueError):
            TileCoord(0, 0, 0)


def window_is_covered(plan) -> bool:
    ox, oy = plan.crop_origin
    tile_cols = {t.x for t in plan.tiles}
    tile_rows = {t.y for t in plan.tiles}
    for gx in (ox, ox + plan.size - 1):
        for gy in (oy, oy + plan.size - 1):
            if gx // 256 not in tile_cols or gy // 256 not in tile_rows:
                return False
    return True


class TestPlanWindow:
    def test_interior_window_single_tile(self):
        # Tile (1, 1) at zoom 2 spans pixels 256..511; its center is interior.
        lat, lon = global_pixel_to_latlon(384.0, 384.0, 2)
        plan = plan_window(lat, lon, zoom=2, size=224)
        assert len(plan.tiles) == 1
        assert not plan.clamped

    def test_corner_window_four_tiles(self):
        lat, lon = global_pixel_to_latlon(512.0, 512.0, 2)
        plan = plan_window(lat, lon, zoom=2, size=224)
        assert len(plan.tiles) == 4

    def test_every_plan_covers_its_crop(self):
        rng = np.random.default_rng(99)
        for _ in range(300):
            lat = float(rng.uniform(-80, 80))
            lon = float(rng.uniform(-179, 179))
            zoom = int(rng.integers(2, 21))
            plan = plan_window(lat, lon, zoom=zoom)
            assert 1 <= len(plan.tiles) <= 4
            assert window_is_covered(plan)

    def test_tile_sets_are_minimal(self):
        """Every listed tile overlaps the window, so none can be dropped."""
        rng = np.random.default_rng(7)
        for _ in range(200):
            lat = float(rng.uniform(-80, 80))
            lon = float(rng.uniform(-179, 179))
            plan = plan_window(lat, lon, zoom=int(rng.integers(2, 21)))
            ox, oy = plan.crop_origin
            for tile in plan.tiles:
                x_overlap = max(ox, tile.x * 256) < min(ox + plan.size, (tile.x + 1) * 256)
                y_overlap = max(oy, tile.y * 256) < min(oy + plan.size, (tile.y + 1) * 256)
                assert x_overlap and y_overlap

    def test_map_edge_clamps_and_reports(self):
        plan = plan_window(85.05, -180.0, zoom=2, size=224)
        assert plan.clamped
        assert plan.crop_origin == (0, 0)
        assert window_is_covered(plan)


def write_tile(root, tile, pixels):
    path = root / str(tile.zoom) / f"{tile_to_quadkey(tile)}.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(tiles.encode_png(pixels))


def checkerboard_tile(tile: TileCoord) -> np.ndarray:
    """Pixel-index oracle: channel values encode global pixel coordinates."""
    gx = tile.x * 256 + np.arange(256)[None, :]
    gy = tile.y * 256 + np.arange(256)[:, None]
    pixels = np.zeros((256, 256, 3), dtype=np.uint8)
    pixels[:, :, 0] = gx % 256
    pixels[:, :, 1] = gy % 256
    pixels[:, :, 2] = (gx // 256 + gy // 256) % 2 * 255
    return pixels


class TestFetchAndStitch:
    def test_solid_color_preserved(self, tmp_path):
        lat, lon = global_pixel_to_latlon(512.0, 512.0, 2)
        plan = plan_window(lat, lon, zoom=2)
        red = np.zeros((256, 256, 3), dtype=np.uint8)
        red[:, :, 0] = 255
        for tile in plan.tiles:
            write_tile(tmp_path, tile, red)
        image = fetch_and_stitch(FilesystemTileClient(tmp_path), plan)
        assert image.pixels.shape == (224, 224, 3)
        assert (image.pixels == red[:224, :224]).all()
        assert len(image.source_quadkeys) == 4

    def test_checkerboard_crop_matches_pixel_oracle(self, tmp_path):
        lat, lon = global_pixel_to_latlon(500.0, 470.0, 2)
        plan = plan_window(lat, lon, zoom=2)
        assert len(plan.tiles) == 4
        for tile in plan.tiles:
            write_tile(tmp_path, tile, checkerboard_tile(tile))
        image = fetch_and_stitch(FilesystemTileClient(tmp_path), plan)
        ox, oy = plan.crop_origin
        gx = ox + np.arange(224)[None, :]
        gy = oy + np.arange(224)[:, None]
        assert (image.pixels[:, :, 0] == gx % 256).all()
        assert (image.pixels[:, :, 1] == gy % 256).all()

    def test_cache_hit_makes_no_network_requests(self, tmp_path):
        lat, lon = global_pixel_to_latlon(512.0, 512.0, 2)
        plan = plan_window(lat, lon, zoom=2)
        for tile in plan.tiles:
            write_tile(tmp_path / "origin", tile, checkerboard_tile(tile))
        origin = FilesystemTileClient(tmp_path / "origin")
        client = CachingTileClient(origin, tmp_path / "cache")
        first = fetch_and_stitch(client, plan)
        assert origin.requests == 4
        second = fetch_and_stitch(client, plan)
        assert origin.requests == 4  # served from disk
        assert (first.pixels == second.pixels).all()
        assert (tmp_path / "cache" / "2").exists()

    def test_missing_tile_raises(self, tmp_path):
        plan = plan_window(0.0, 0.0, zoom=2)
        with pytest.raises(TileError, match="no tile"):
            fetch_and_stitch(FilesystemTileClient(tmp_path), plan)

    def test_malformed_tile_raises(self, tmp_path):
        lat, lon = global_pixel_to_latlon(384.0, 384.0, 2)
        plan = plan_window(lat, lon, zoom=2)
        path = tmp_path / "2" / f"{tile_to_quadkey(plan.tiles[0])}.png"
        path.parent.mkdir(parents=True)
        path.write_bytes(b"not a png")
        with pytest.raises(TileError, match="malformed"):
            fetch_and_stitch(FilesystemTileClient(tmp_path), plan)


class TestHttpClient:
    def test_retries_then_succeeds(self, monkeypatch):
        calls = {"n": 0}
        payload = tiles.encode_png(np.zeros((256, 256, 3), dtype=np.uint8))

        class FakeResponse:
            content = payload

            def raise_for_status(self):
                pass

        def fake_get(url, timeout):
            calls["n"] += 1
            if calls["n"] < 3:
                raise ConnectionError("flaky")
            assert "213" in url
            return FakeResponse()

        import requests

        monkeypatch.setattr(requests, "get", fake_get)
        client = HttpTileClient("https://tiles.example/{quadkey}.png", sleep=lambda s: None)
        assert client.get(TileCoord(3, 5, 3)) == payload
        assert calls["n"] == 3

    def test_exhausted_retries_raise(self, monkeypatch):
        import requests

        def always_fail(url, timeout):
            raise ConnectionError("down")

        monkeypatch.setattr(requests, "get", always_fail)
        client = HttpTileClient("https://tiles.example/{quadkey}.png", retries=2, sleep=lambda s: None)
        with pytest.raises(TileError, match="after 3 attempts"):
            client.get(TileCoord(0, 0, 1))

    def test_xyz_template(self, monkeypatch):
        import requests

        seen = {}
        payload = tiles.encode_png(np.zeros((256, 256, 3), dtype=np.uint8))

        class FakeResponse:
            content = payload

            def raise_for_status(self):
                pass

        def fake_get(url, timeout):
            seen["url"] = url
            return FakeResponse()

        monkeypatch.setattr(requests, "get", fake_get)
        HttpTileClient("https://t.example/{z}/{x}/{y}.png").get(TileCoord(3, 5, 3))
        assert seen["url"] == "https://t.example/3/3/5.png"
