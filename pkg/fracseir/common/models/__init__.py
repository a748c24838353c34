# SPDX-License-Identifier: GPL-3.0+

from fracseir.common.models.cases import CaseSeries  # noqa: F401
from fracseir.common.models.epidemic import (  # noqa: F401
    COMPARTMENTS, EpidemicState, ForecastBundle, RateFunctions, SeirConstants, Trajectory,
)
