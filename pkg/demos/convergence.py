"""Refinement behaviour of the cell indicator on flat grids.

max |alpha| should fall like h^2 for a smooth function, like h at a crease
and not at all at a jump.
"""
from rdi.studies import convergence

rows, slopes = convergence(ns=(16, 32, 64, 128))
print("%6s %10s %12s %12s %12s" % ("n", "h", "smooth", "crease", "jump"))
for r in rows:
    print("%6d %10.5f %12.4e %12.4e %12.4e" % (r["n"], r["h"], r["smooth"], r["c1"], r["c0"]))
print("log-log slopes: smooth %.2f, crease %.2f, jump %.2f" % (slopes["smooth"], slopes["c1"], slopes["c0"]))
