"""Query binning over partitioned (encrypted + cleartext) relations."""

__version__ = "0.1.0"
