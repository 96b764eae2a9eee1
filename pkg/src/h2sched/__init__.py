"""Hydrogen-demand forecasting and electrolyzer scheduling from taxi-trip data."""

__version__ = "0.1.0"
