"""Address resolution plug point.

Address-based regions and filters delegate to a Geocoder.  The default is an
offline stub that always raises, keeping the core network-free; deployments
supply their own resolver (or a FixedGeocoder for tests and demos).
"""

from __future__ import annotations


class GeocoderUnavailable(RuntimeError):
    """No geocoder is configured; address regions cannot be resolved."""


class Geocoder:
    """Resolves a free-form address to a (lat_min, lon_min, lat_max, lon_max)
    geodetic bounding box."""

    def geocode(self, address: str) -> tuple[float, float, float, float]:
        raise NotImplementedError


class OfflineGeocoder(Geocoder):
    def geocode(self, address: str) -> tuple[float, float, float, float]:
        raise GeocoderUnavailable(
            f"cannot resolve {address!r}: no geocoder configured")


class FixedGeocoder(Geocoder):
    """Resolves from a fixed address -> box table."""

    def __init__(self, table: dict):
        self.table = dict(table)

    def geocode(self, address: str) -> tuple[float, float, float, float]:
        try:
            return tuple(self.table[address])
        except KeyError:
            raise GeocoderUnavailable(f"unknown address {address!r}") from None
