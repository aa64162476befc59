"""Training backend for injection corpora and scope classifiers.

Consumes corpus.jsonl / scope.jsonl files produced by the pipeline, trains a
model, and serves the resulting artifact over the shared wire contract
(POST /complete, POST /classify) so the evaluation harness can score it like
any other backend.
"""

__version__ = "0.1.0"
