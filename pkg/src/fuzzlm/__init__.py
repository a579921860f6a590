"""fuzzlm: format-aware file fuzzing driven by a character-level recurrent LM.

The pipeline: preprocess seed files into a corpus, train a from-scratch LSTM
language model on it, generate new test data by sampling the model (with two
fuzzing algorithms that target the parser and renderer stages respectively),
assemble the data into valid PDF incremental updates, and run crash-detecting
campaigns against a target program.
"""

__version__ = "0.1.0"
