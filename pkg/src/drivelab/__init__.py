"""drivelab: synthetic driving world, map matching, map features, a tiny
neural stack, adversarial/comfort model training, and the evaluation suite
that scores accuracy, comfort and human-likeness."""

__version__ = "0.1.0"
