"""Eight-way causal variance decomposition of outcomes across hospitals and groups."""

__version__ = "0.1.0"

from .data import CategoryMap, ColumnRoles, Dataset, SaturatedDesign, StandardDesign, load_csv, write_csv
from .decompose import COLUMNS, NAMES, CellTable, Components, decompose, decompose_cells, decompose_params
from .kernels import BACKEND
from .models import FittedModels, fit_glm, fit_models, fit_multinomial
from .oracles import DiscreteLaw, brute_force_components, dichotomous_components
from .simulate import Scenario, builtin, generate, run_replicates, true_components
from .uncertainty import Pipeline, UncertaintySummary, bootstrap, mvn_draws, posterior_draws

__all__ = [
    "BACKEND", "COLUMNS", "NAMES", "CategoryMap", "CellTable", "ColumnRoles", "Components", "Dataset",
    "DiscreteLaw", "FittedModels", "Pipeline", "SaturatedDesign", "Scenario", "StandardDesign",
    "UncertaintySummary", "bootstrap", "brute_force_components", "builtin", "decompose",
    "decompose_cells", "decompose_params", "dichotomous_components", "fit_glm", "fit_models",
    "fit_multinomial", "generate", "load_csv", "mvn_draws", "posterior_draws", "run_replicates",
    "true_components", "write_csv",
]
