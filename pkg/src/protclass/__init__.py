"""Binary classification of protein sequences (real vs. synthetic) with a small 1D CNN.

The pipeline: stream PDBML files into a sequence table, build a balanced
fixed-length dataset with synthetic negatives, train a numpy convolutional
network with Adadelta, and report loss/accuracy curves and confusion matrices.
"""

__version__ = "0.1.0"
