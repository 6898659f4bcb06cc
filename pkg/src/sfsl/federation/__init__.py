"""Round orchestration for the server and client roles."""

from .data import (
    ClientDataset,
    IndexCorrelationMap,
    TrainingExample,
    build_succinct_training_set,
    count_vector,
    derive_secondary_ids,
    read_dataset,
    synthesize_client,
    write_dataset,
)
from .round import FederatedClient, RoundConfig, SubmodelUpdate, apply_aggregate, run_round, select_clients
from .training import SyntheticTrainer, Trainer, synthetic_trainer
