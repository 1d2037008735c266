"""Unsupervised image captioning through a concept-structured shared
embedding space: a triplet-regularized sentence autoencoder, weak
image-sentence assignment from overlapping visual concepts, and a robust
plus adversarial translation of image features into the sentence manifold.
"""

__version__ = "0.1.0"
