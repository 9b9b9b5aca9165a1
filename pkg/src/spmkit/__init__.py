"""Semi-parametric models that unlearn by deleting rows of their inputted set
at test time, plus retraining oracles, parametric/non-parametric baselines,
and prediction-gap metrics. Everything runs at desk scale on synthetic 2-D
data with plain numpy.
"""

__version__ = "0.1.0"
