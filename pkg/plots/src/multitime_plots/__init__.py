"""Figure panels from multitime sweep CSVs."""

__version__ = "0.1.0"

from .render import PANELS, PanelSpec, collect_series, render
from .series import Series, build_series, centered_moving_average, read_rows
