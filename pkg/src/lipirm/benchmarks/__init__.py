"""
Built-in Benchmarks
===================

Importing this package registers the built-in generators:

- ``regression_1d``: heteroskedastic 1-D regression with analytic truth
- ``confounded``: confounded multi-domain regression
- ``two_bit``: two-bit spurious-correlation classification with corruption
- ``csv``: domains read from a CSV file
"""

from .confounded import ConfoundedGenerator, gen_confounded_regression
from .csv_source import CsvSourceConfig, CsvSourceGenerator
from .regression_1d import Regression1DGenerator, draw_from_setting, gen_regression_1d, theory_setting
from .two_bit import TwoBitGenerator, gen_two_bit

__all__ = [
    "ConfoundedGenerator",
    "CsvSourceConfig",
    "CsvSourceGenerator",
    "Regression1DGenerator",
    "TwoBitGenerator",
    "draw_from_setting",
    "gen_confounded_regression",
    "gen_regression_1d",
    "gen_two_bit",
    "theory_setting",
]
