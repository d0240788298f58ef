"""Min-max adversarial training of driving policies against a Gibbs adversary."""
__version__ = "0.1.0"
