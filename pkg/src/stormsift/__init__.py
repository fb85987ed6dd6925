"""Streaming triage of disaster social-media imagery.

Ingests a tweet stream, deduplicates image URLs and image content,
classifies images for relevance and damage severity through pluggable
adapters, routes samples to human verification, and computes the
confusion matrices and weighted metrics used to judge the system.
"""

__version__ = "0.1.0"
