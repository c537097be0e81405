"""Reversible signal camouflage with divergence-kernel evaluation.

Short multi-sensor recordings are fused into labeled instances, hidden
inside tiny images or audio clips (invertibly, via sidecar metadata),
described by texture/cepstral descriptors, and compared before and after
encoding with Chisini-Jensen-Shannon divergence kernel SVMs and one-class
novelty detectors.
"""

__version__ = "0.1.0"
