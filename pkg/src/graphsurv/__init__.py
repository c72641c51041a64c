"""Survival-analysis models of continuous-time network event histories."""
from graphsurv._backend import BACKEND
from graphsurv.events import (
    Event,
    EventHistory,
    IngestError,
    NodeTable,
    SplitSpec,
    ingest_csv,
    preprocess,
    read_events,
    split,
    write_events,
)
from graphsurv.features import DecayConfig, FeatureState, Standardizer
from graphsurv.intensity import (
    CheckpointError,
    MarkovModel,
    PoissonParams,
    PwcHazard,
    compensator,
    markov_intensity,
    poisson_rate,
)
from graphsurv.training import ContrastiveConfig, OptimizerConfig, fit, initial_model, nll_contrastive, nll_exact
from graphsurv.simulation import SimConfig, simulate
from graphsurv.evaluation import Scorer, burstiness, burstiness_report, link_prediction, make_labeled_pairs, roc_auc

__version__ = "0.1.0"
