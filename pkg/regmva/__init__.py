"""
regmva: regularized PCA, CCA and OPLS that keep the extracted features
uncorrelated.
"""

from regmva.core import (
    Method,
    MvaProblem,
    MvaVariant,
    ProjectionModel,
    Variant,
    fit_closed_form,
    objective,
    prepare_problem,
    trace_objective,
    uncorrelation_residual,
)
from regmva.dataset import Dataset, center_and_standardize, covariances, load_csv, one_hot
from regmva.errors import MvaError
from regmva.iterate import InitScheme, fit_iterative, stall_check
from regmva.metrics import cef, tev
from regmva.regularizers import Penalty, PenaltyKind, gamma_for_sparsity, u_step
from regmva.wstep import WStepStrategy, w_step_eigen, w_step_procrustes
