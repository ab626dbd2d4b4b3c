"""Converter from the public cuffless-BP MATLAB archive to EPBN files."""

__version__ = "0.1.0"
