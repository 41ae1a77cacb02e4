from .batching import DomainBatch, make_batches
from .records import (BehaviorEvent, Dataset, InteractionRecord, ParseError, parse_record,
                      read_records, serialize_record, write_records)
from .synth import SynthConfig, generate, generate_records
from .tokenizer import tokenize

__all__ = [
    "BehaviorEvent", "Dataset", "DomainBatch", "InteractionRecord", "ParseError",
    "SynthConfig", "generate", "generate_records", "make_batches", "parse_record",
    "read_records", "serialize_record", "tokenize", "write_records",
]
