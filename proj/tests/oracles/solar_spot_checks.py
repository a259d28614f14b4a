"""Reference sun positions for the solar unit/acceptance tests.

Computed with the NREL SPA implementation shipped in pvlib. Elevation is the
geometric (refraction-free) value. Re-run to regenerate the table embedded in
tests/solar_reference.hpp.
"""
import pandas as pd
import pvlib

CASES = [
    ("2012-06-21T18:00:00Z", 38.63, -90.20),
    ("1990-01-15T12:00:00Z", 51.48, 0.00),
    ("1995-07-04T16:30:00Z", 40.71, -74.01),
    ("1999-12-31T23:00:00Z", -33.87, 151.21),
    ("2001-03-21T10:00:00Z", 48.86, 2.35),
    ("2003-09-23T04:00:00Z", 35.68, 139.69),
    ("2005-05-10T20:15:00Z", 34.05, -118.24),
    ("2007-11-02T14:45:00Z", 41.39, 2.17),
    ("2008-08-08T06:00:00Z", 1.35, 103.82),
    ("2010-02-14T15:00:00Z", -22.91, -43.17),
    ("2011-10-31T09:30:00Z", 50.98, 11.03),
    ("2013-04-01T17:00:00Z", 33.42, -111.93),
    ("2014-12-21T12:00:00Z", 64.15, -21.94),
    ("2016-06-01T03:00:00Z", 28.61, 77.21),
    ("2018-01-01T11:00:00Z", 47.69, 9.27),
    ("2020-07-15T21:00:00Z", 38.95, -92.33),
    ("2022-03-10T08:00:00Z", -1.29, 36.82),
    ("2024-09-01T13:30:00Z", 59.33, 18.07),
    ("2027-05-20T19:45:00Z", 45.50, -73.57),
    ("2030-11-11T02:00:00Z", -37.81, 144.96),
]

for ts, lat, lon in CASES:
    t = pd.DatetimeIndex([pd.Timestamp(ts)])
    sp = pvlib.solarposition.get_solarposition(t, lat, lon, method="nrel_numpy")
    print(f'    {{"{ts}", {lat:.2f}, {lon:.2f}, {sp["azimuth"].iloc[0]:.4f}, '
          f'{sp["elevation"].iloc[0]:.4f}}},')
