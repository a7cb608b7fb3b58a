"""Generalizability scoring for saliency-map explanation methods.

Explanations from a method are treated as a distribution to be learned: an
autoencoder is trained to map original images to the method's maps, and the
method is scored by how learnable that mapping is (Distribution
Learnability) and how much class structure the reconstructions retain
(Variance Proximity). The product of the two is the method score.
"""

__version__ = "0.1.0"
