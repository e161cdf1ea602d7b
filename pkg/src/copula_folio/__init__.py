"""Copula-based GMV portfolio construction and rolling-window backtesting."""

from importlib import resources

__version__ = "0.1.0"


def bundled_panel_path():
    """Path to the bundled 3-asset, 600-day synthetic price panel (wide CSV)."""
    return resources.files(__name__) / "data" / "synthetic_3asset.csv"
