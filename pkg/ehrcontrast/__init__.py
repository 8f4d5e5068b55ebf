# -*- coding: utf-8 -*-
from __future__ import absolute_import

from .cohort import Cohort, PatientRecord, CohortPreprocessor, load_cohort, save_cohort
from .synthgen import GeneratorConfig, generate_cohort, planted_truth
from .models import PatientEncoder
from .training import TrainConfig, TrainedModel, train
from .interpret import aggregate_heatmap, explain_sequences
from .metrics import auroc, auprc, silhouette
from .config import ExperimentConfig, load_config, dump_config
from .experiment import run_experiment, write_outputs, kfold_split
