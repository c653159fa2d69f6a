"""Two-stage shilling-attack detection for implicit-feedback recommenders.

Stage I pre-screens suspicious users with cheap behavioral filters (PCA
similarity, unpopular-item ratio); Stage II audits the candidates'
interaction histories semantically through a chat-completion service.
The package also ships heuristic attack injectors, a composite reward
scorer that exports fine-tuning records for an external policy trainer, a
desk-scale graph recommender for impact studies, and detection/ranking
metrics.
"""

__version__ = "0.1.0"
