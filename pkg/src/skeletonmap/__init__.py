"""Executable self-similar map F from the ball to the skeleton of a cube grid,
with numerical certificates for its rank, self-similarity and boundary behaviour."""

from .assembly import (Construction, EvalResult, PaddedMapSpec, base_map_F0,
                       build_construction, default_construction, eval_F, jacobian_F,
                       make_padded_spec, pad_map_f, project_pi)
from .errors import *  # noqa: F401,F403
from .instance import (BallLayout, InstanceParams, Similarity, address_to_ball, cantor_point,
                       child_similarities, make_instance, pack_balls)

__version__ = "0.1.0"
