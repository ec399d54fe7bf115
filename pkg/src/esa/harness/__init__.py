from .experiments import (
    ExperimentConfig,
    cv_select,
    gen_regression,
    replicate_seed,
    run_cluster_experiment,
    run_experiment,
    run_gauss_experiment,
    run_knn_experiment,
)
from .records import CSV_HEADER, RunRecord, read_csv, write_csv
