"""Machine-learning and analyst earnings forecasts, overreaction tests and an
equity-issuance equilibrium model, all runnable on synthetic panels."""

__version__ = "0.1.0"
