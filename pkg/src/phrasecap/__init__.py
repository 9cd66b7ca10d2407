"""Phrase-based caption decoder trained with policy gradients shaped by
natural-language feedback, plus the feedback classifier, scripted teacher and
annotation service around it."""

__version__ = "0.1.0"
