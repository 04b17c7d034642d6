"""Sharp rims break WLS stencils unless the mesh is split along them.

z + 2 is linear, so any marker on the closed cylinder is a false positive
caused by fits that straddle the rim between the side and the caps.
"""
from rdi import assemble, detect, detect_features, meshgen, testfns, virtual_split

mesh = meshgen.cylinder(32, 16)
f = testfns.eval("z_plus_2", mesh.vertex_coords)

plain = detect(mesh, assemble(mesh), f)
print("without splitting:", plain.counts())

features = detect_features(mesh)
split = virtual_split(mesh, features)
res = detect(split, assemble(split), f)
print("split along %d feature half-edges:" % len(features), res.counts())
