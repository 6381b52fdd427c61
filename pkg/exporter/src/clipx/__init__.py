"""Embedding exporter and /embed service.

Writes text and per-patch image embeddings in the pandaug binary store
format and can serve the same encoder over the POST /embed wire protocol.
The two products are interchangeable: a store exported offline and the
responses of a service built on the same encoder agree per vector.
"""

__version__ = "0.1.0"
