"""CTR prediction engine with learned soft-discretization embeddings
for numerical features, plus the classic baseline encoder families."""

__version__ = "0.1.0"
