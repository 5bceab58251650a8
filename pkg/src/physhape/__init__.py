"""physhape: stress-aware shape optimization.

A triangle mesh is fitted as a neural signed-distance field (positive
inside), a displacement network is pretrained against a voxel FEM
solution of the linear-elastic boundary-value problem, and the two
networks are then co-trained so the geometry lowers and evens out its
von-Mises stress under the prescribed load while respecting volume and
exterior-shape constraints.
"""

__version__ = "0.1.0"
