"""Two-neutron spin dynamics on a multi-level transmon.

Core library: nuclear Hamiltonian construction, GRAPE pulse synthesis,
Lindblad device simulation, and spectral eigenvalue extraction.  The
FastAPI service in :mod:`nnspin.service` exposes the staged pipeline;
the CLI in :mod:`nnspin.cli` is a thin client of that service.
"""

__version__ = "0.1.0"
