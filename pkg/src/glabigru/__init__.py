"""Relation classification with a BiGRU and hybrid global/local attention.

Modules: ``numcore`` (numeric helpers and gradient checking), ``corpus``
(data formats, vocabulary, dependency paths), ``model`` (forward and
backward passes), ``train`` (optimizer, training loop, checkpoints),
``evaluation`` (scoring, attention dumps, synthetic benchmark) and ``cli``.
"""

__version__ = "0.1.0"
