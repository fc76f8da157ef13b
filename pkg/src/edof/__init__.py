"""Extended depth of field from coded-aperture raw captures.

Simulate chromatic defocus through a phase mask, solve per-patch blind sparse
recovery, train its unrolled network, and emulate the 16-bit streaming
hardware that runs it.
"""

__version__ = "0.1.0"
