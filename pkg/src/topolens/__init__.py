"""topolens: learn and visualize which regions of a persistence diagram matter.

Pipeline: scalar grids / node-weighted graphs -> persistence diagrams ->
unweighted persistence images -> deep metric CNN (triplet loss, SimAM
attention) -> Grad-CAM importance field over diagram space -> renderings
(field heatmaps, diagram overlays, in-image interlevel-set tints).
"""

from .diagram import (
    ESSENTIAL,
    EXTENDED,
    ORDINARY,
    RELATIVE,
    PersistenceDiagram,
    PersistencePoint,
)
from .filtration import (
    FeatureRegion,
    FilteredGraph,
    MergeHistory,
    ScalarGrid,
    extended_pd_graph,
    extended_pd_reduction_oracle,
    feature_region,
    feature_regions,
    sublevel_pd0,
)

__version__ = "0.1.0"

__all__ = [
    "ESSENTIAL",
    "EXTENDED",
    "ORDINARY",
    "RELATIVE",
    "PersistenceDiagram",
    "PersistencePoint",
    "FeatureRegion",
    "FilteredGraph",
    "MergeHistory",
    "ScalarGrid",
    "extended_pd_graph",
    "extended_pd_reduction_oracle",
    "feature_region",
    "feature_regions",
    "sublevel_pd0",
    "__version__",
]
