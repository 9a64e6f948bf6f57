# unit tests for mixgp; run with: python -m unittest discover test
