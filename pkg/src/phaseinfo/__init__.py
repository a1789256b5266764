"""Information estimators for ensembles of 1D phase profiles."""
