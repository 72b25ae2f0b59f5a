"""Entity linking for community-QA texts.

Links entity mentions found in questions and answers to knowledge-base
entities, combining a context/description cross-encoder with similarity
features computed over auxiliary data: parallel answers, topic meta-data,
and user meta-data.
"""

__version__ = "0.1.0"
