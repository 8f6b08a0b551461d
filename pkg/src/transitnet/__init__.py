"""Dynamic spatio-temporal forecasting of station-level transit ridership."""

__version__ = "0.1.0"
