"""Joint topic/hub/authority modeling of follow graphs with posts.

Public surface:

- hat.corpus: ingestion, splits, two-hop candidates, pair subsampling
- hat.model: parameters, likelihood, synthetic generation, serialization
- hat.inference: Gibbs-EM fitting
- hat.baselines: HITS, LDA, per-post topic model, perplexity
- hat.evaluation: ranking metrics and topic reports
- hat.cli: command-line entry point
"""

__version__ = "0.1.0"
