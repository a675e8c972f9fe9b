"""Regenerate crates/core/tests/fixtures/utm_reference.json with pyproj (PROJ)."""
import json
import pathlib

from pyproj import Transformer

POINTS = [
    ("toronto", -79.3832, 43.6532, 17, True),
    ("ottawa", -75.6972, 45.4215, 18, True),
    ("sydney", 151.2093, -33.8688, 56, False),
    ("equator_central_meridian", 3.0, 0.0, 31, True),
    ("zone17_west_edge_high_lat", -83.9, 60.5, 17, True),
]

out = []
for name, lon, lat, zone, north in POINTS:
    epsg = (32600 if north else 32700) + zone
    t = Transformer.from_crs("EPSG:4326", f"EPSG:{epsg}", always_xy=True)
    e, n = t.transform(lon, lat)
    out.append(dict(name=name, lon=lon, lat=lat, zone=zone, north=north,
                    easting=round(e, 4), northing=round(n, 4)))

path = pathlib.Path(__file__).resolve().parents[1] / "crates/core/tests/fixtures/utm_reference.json"
path.write_text(json.dumps(out, indent=2) + "\n")
print(path.read_text())
