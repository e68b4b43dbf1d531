"""Cross-domain sequential recommendation with graph-smoothed attention
encoders and a contrastive infomax objective."""

__version__ = "0.1.0"
