"""Water-body monitoring from Sentinel-style datacubes: SAR despeckling,
water segmentation, next-frame forecasting and volume estimation."""

from hydrocube.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
