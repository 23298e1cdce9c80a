"""Grammar-driven engine for urban visual analytics.

Declarative JSON scenes bind "knots" (chains of spatial joins, aggregations,
and expressions over city layers) to maps and plots.  Submodules: grammar
(parse/validate/serialize), layers (the .utk store), geometry, triangulate,
ingest, exprlang, knots (evaluation), solar, shadow, engine (scene-level
orchestration), server (HTTP API), cli.
"""

__version__ = "0.1.0"

from .grammar import (  # noqa: F401
    Diagnostic,
    SpecError,
    Specification,
    canonicalize,
    parse_spec,
    serialize,
    validate_spec,
)
from .layers import (  # noqa: F401
    ColorScale,
    PhysicalLayer,
    PhysicalObject,
    ThematicLayer,
    Workspace,
    load_layer,
    save_layer,
)
