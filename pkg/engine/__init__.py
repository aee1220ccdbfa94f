"""
engine/ - Numerical Core
========================
Dense-network forward/backward passes, losses, optimizers, parameter
initialization and finite-difference verification. Lowest layer: depends
only on models/ and utils/.
"""
