"""Bundled example data."""
from __future__ import annotations

from importlib import resources

import numpy as np
import pandas as pd

from .model import SvcData

USCHANGE_COVARIATES = ("Income", "Production", "Savings", "Unemployment")


def load_uschange():
    """Quarterly US percentage changes, Q1 1970 to Q3 2016 (187 rows).

    Columns: ``time`` (decimal year), Consumption, Income, Production,
    Savings, Unemployment.
    """
    with resources.files(__package__).joinpath("data/uschange.csv").open("r") as fh:
        return pd.read_csv(fh, float_precision="round_trip")


def uschange_svc_data():
    """Consumption on an intercept and the four other series, all varying in time.

    Returns ``(data, names)`` where `names` labels the columns of X (= W).
    """
    df = load_uschange()
    names = ["Intercept", *USCHANGE_COVARIATES]
    X = np.column_stack([np.ones(len(df)), df[list(USCHANGE_COVARIATES)].to_numpy()])
    data = SvcData(df["Consumption"].to_numpy(), X, df["time"].to_numpy()[:, None])
    return data, names
