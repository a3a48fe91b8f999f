"""Structured perspective regularization for filter pruning.

Subpackages/modules:

* ``nnet``     - small float64 network engine with manual backprop
* ``checkpoint`` - SPRC checkpoint container
* ``groups``   - prunable-entity partitions, big-M estimation, pruning verdicts
* ``spr``      - the perspective penalty, its gradient and baseline regularizers
* ``relax``    - tiny MIP instances and their relaxations
* ``dataio``   - synthetic data, IDX files, normalization, augmentation
* ``pipeline`` - train / prune / fine-tune orchestration
* ``config``   - typed INI configuration with environment overrides
* ``cli``      - command line entry point
"""

__version__ = "0.1.0"
