"""patchaudit: confounding-aware failure auditing for binary patch classifiers.

The package covers the full audit pipeline: record parsing, patch-dataset
construction geometry, bootstrapped subgroup metrics, Welch/Bonferroni
testing, and logistic failure-risk models with odds-ratio to risk-ratio
conversion.  Hot numeric kernels run through a compiled extension when
available (see ``patchaudit.kernels``).
"""

__version__ = "0.1.0"
