import datetime as dt

import numpy as np

from hydrocube.datacube import BANDS, CubeManifest, DataCube


def random_cube(rng, T=4, H=16, W=16, lat=40.0, lon=10.0, baseline="03.01"):
    dates = [dt.date(2020, 1, 1) + dt.timedelta(days=61 * t) for t in range(T)]
    values = rng.random((T, H, W, len(BANDS))).astype(np.float32) * 100
    # static bands repeat the first frame
    values[:, :, :, 6:] = values[:1, :, :, 6:]
    m = CubeManifest(lat=lat, lon=lon, timestamps=dates, width=W, height=H, processing_baseline=baseline)
    return DataCube(m, values)
