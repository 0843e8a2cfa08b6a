"""skelsolve: fast direct solver for 2D boundary integral equations.

Recursive skeletonization with proxy-surface compression, augmented
systems for multiply-connected Stokes flow, Laplace Neumann problems,
in-place factorization updating after local boundary perturbations, and a
shape-optimization driver.
"""

from .dense import IDResult, PLU, SingularPivotError, interpolative_decomposition, plu, two_sided_id
from .geometry import (AddHole, Boundary, CurveSpec, DeleteHole, GeometryError, HolePath,
                       MoveHole, PerturbationReport, annulus_specs, apply_perturbation,
                       build_boundary, circle_knots, starfish_knots, starfish_specs)
from .kernels import (LAPLACE, STOKES, AugmentationData, SystemSpec, assemble_dense,
                      build_augmentation, check_consistency, eval_block, eval_forward_block,
                      net_flux, nullspace_vectors, proxy_nodes, system_matvec)
from .problems import boundary_data, couette_velocity
from .skel import (BoxFactors, Factorization, RootBoxExceededError, evaluate_interior,
                   factor, update)
from .tree import Tree, TreeError, build_tree, default_root_box, mark_dirty, refit_tree

__version__ = "0.1.0"
