from .corpus import DataError, Graph, InteractionEvent, RawCorpus, Session, Vocab, ingest
from .prepared import PrepareConfig, PreparedCorpus, load_prepared, prepare, resplit, write_prepared
from .sampling import NeighborhoodSample, halving_budgets, sample_neighborhood
from .sessions import (
    DatasetSplit,
    FilteredCorpus,
    History,
    eligible_train_sessions,
    filter_corpus,
    merge_sessions,
    segment_sessions,
    select_friend_sessions,
    split,
)
from .synth import SynthConfig, generate, synth_generate, write_corpus

__all__ = [
    "DataError",
    "DatasetSplit",
    "FilteredCorpus",
    "Graph",
    "History",
    "InteractionEvent",
    "NeighborhoodSample",
    "PrepareConfig",
    "PreparedCorpus",
    "RawCorpus",
    "Session",
    "SynthConfig",
    "Vocab",
    "eligible_train_sessions",
    "filter_corpus",
    "generate",
    "halving_budgets",
    "ingest",
    "load_prepared",
    "merge_sessions",
    "prepare",
    "resplit",
    "sample_neighborhood",
    "segment_sessions",
    "select_friend_sessions",
    "split",
    "synth_generate",
    "write_corpus",
    "write_prepared",
]
