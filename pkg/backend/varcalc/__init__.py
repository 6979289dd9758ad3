"""Nonsmooth variational analysis and bilevel stationarity checks."""
