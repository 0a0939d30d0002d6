"""Service-emulation testbed.

Executes lightweight endpoint models (LDAP directory servers as the shipped
vocabulary) behind real TCP sockets so a service-consuming system under test
can be exercised against thousands of endpoints on one machine. The package
also ships ``loadgen``, a workload-driver client that exercises a fleet and
reports per-endpoint results.
"""

__version__ = "0.1.0"
