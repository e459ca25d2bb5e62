"""Distill control policies into interpretable models.

The toolkit couples a DAgger loop with an episode-dependent expert/learner
alternation curriculum, trains three interpretable model families on the
aggregated data (gradient-boosted trees, explainable boosting machines,
symbolic expressions), and ships the analysis tooling to quantify and
explain what the distilled policies do.
"""

from distillkit._backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
