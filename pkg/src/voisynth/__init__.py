"""Value of information for Bayesian evidence synthesis from posterior samples."""

from voisynth.samples import SampleTable, read_csv, summarize, write_csv

__version__ = "0.1.0"

__all__ = ["SampleTable", "read_csv", "write_csv", "summarize", "__version__"]
