"""Why beta weights cells by area.

At a vertex shared by one coarse cell and three thin ones, a smooth function
gives the coarse cell a much larger |alpha|.  Counting cells equally makes
that look like sign oscillation; weighting by area does not.
"""
from rdi.studies import nonuniform

rows, _ = nonuniform(ratios=(0.1, 0.05, 0.02, 0.01))
print("%8s %10s %10s %8s %8s" % ("ratio", "beta unit", "beta area", "mk unit", "mk area"))
for r in rows:
    print("%8.3f %10.4f %10.4f %8d %8d" % (r["ratio"], r["beta_unit"], r["beta_area"], r["marker_unit"], r["marker_area"]))
