"""Acoustic drone detection from microphone-array mixtures.

FastICA unmixing, octave-band PSD / RMS and MFCC features, and from-scratch
SVM and Mahalanobis-KNN classifiers, plus a synthetic-data experiment
harness and the ``acousep`` command line tool.
"""

__version__ = "0.1.0"
