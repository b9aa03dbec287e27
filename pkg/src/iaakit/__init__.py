"""iaakit: inter-annotator agreement analytics for binary segmentation masks.

Quantifies per-image agreement across multiple annotators' masks, tests
whether agreement distributions differ between lesion classes (rank tests
and one-sided stochastic dominance), and trains compact models that predict
agreement from image content, alone or jointly with diagnosis.
"""

__version__ = "0.1.0"
