"""Bag-of-words video representation benchmark toolkit.

Dictionary learning (RW, RE, K-means, K-SVD, sparse coding), feature
encoding (VQ, SA, OMP, SC, LLC), sum pooling with Power+L2 normalization,
chi-square RBF kernel SVM classification, and a seeded benchmark harness.

Submodules are imported lazily by design; use e.g.
``from bowbench import encoding`` or ``import bowbench.bench``.
"""

__version__ = "0.1.0"
