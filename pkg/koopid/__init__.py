# Stable Koopman model identification from noisy input-output data
__version__ = "1.0.0"
