"""Cutoff weights and the stacked origin-destination design on a toy region."""

# %%
import numpy as np

from odsdem import (
    CovariateTable,
    FlowMatrix,
    ModelSpec,
    build_design,
    build_weights,
)
from odsdem.weights import Centroids

# Five destinations on a plane (km). E sits alone, 300 km from everything.
dest = ("A", "B", "C", "D", "E")
coords = np.array([[0, 0], [90, 0], [90, 100], [0, 110], [400, 300]], dtype=float)
w = build_weights(Centroids(dest, coords), d_c=120.0, isolated="nearest")
print("row-standardized W:\n", np.round(w.standardized, 3))
print("spectrum:", np.round(w.spectrum, 3))
print("feasible lambda:", w.lambda_bounds())

# %%
# Two origins; flows are destination rows by origin columns.
orig = ("north", "south")
rng = np.random.default_rng(1)
flows = FlowMatrix(rng.integers(50, 500, (5, 2)).astype(float), dest, orig)
tables = [
    CovariateTable("origin", {"gdp_o": [41_000.0, 28_000.0]}, orig, {"gdp_o": "log"}),
    CovariateTable("destination", {"hotels": [12.0, 3.0, 7.0, 9.0, 1.0]}, dest),
    CovariateTable("od_pair", {"distance": rng.uniform(200, 900, (5, 2))}, (dest, orig),
                   {"distance": "log"}),
]
spec = ModelSpec("toy", origin=["gdp_o"], destination=["hotels"], od=["distance"])
design = build_design(flows, tables, w, spec)

# Row j*n + i is the flow from origin j into destination i.
print(design.column_labels)
print(np.round(design.regressors[:6], 3))
