# Shared plumbing; modules are imported directly to keep the package import graph acyclic.
