"""Domain error hierarchy.

Every error carries a stable machine-readable ``code`` used by the CLI
(``--json``) and the HTTP service (422 bodies).
"""


class MapError(Exception):
    """Base class for all domain errors."""

    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.__doc__)


class OutOfBounds(MapError):
    """A world point lies outside the grid extent."""

    code = "out_of_bounds"


class EmptyInput(MapError):
    """An operation received an empty sequence it cannot work with."""

    code = "empty_input"


class DimensionMismatch(MapError):
    """Vectors of differing dimensions were mixed."""

    code = "dimension_mismatch"


class EmptyCloud(MapError):
    """The point cloud contains no points."""

    code = "empty_cloud"


class SingularIntrinsics(MapError):
    """Camera intrinsics are not invertible (fx or fy is zero)."""

    code = "singular_intrinsics"


class NoFreeSpace(MapError):
    """The occupancy grid has no free cells."""

    code = "no_free_space"


class EmptySkeleton(MapError):
    """The skeleton contains no pixels."""

    code = "empty_skeleton"


class NoVisibleEdge(MapError):
    """No graph edge has line of sight to the query position."""

    code = "no_visible_edge"


class StaleBinding(MapError):
    """An edge binding references an edge that no longer exists."""

    code = "stale_binding"


class EmptyRules(MapError):
    """The zone rule list is empty."""

    code = "empty_rules"


class NoProducts(MapError):
    """No products are available for voting."""

    code = "no_products"


class ZoneEmpty(MapError):
    """The zone has no assigned cells."""

    code = "zone_empty"


class PoseInObstacle(MapError):
    """The query pose does not lie in a free cell."""

    code = "pose_in_obstacle"


class ProviderFailure(MapError):
    """The embedding provider failed to produce a vector."""

    code = "provider_failure"


class ProviderMismatch(MapError):
    """Query and pose map were embedded by different providers."""

    code = "provider_mismatch"


class EmptyQuery(MapError):
    """The query carries no usable content."""

    code = "empty_query"


class UnlocalizableMap(MapError):
    """Every pose in the map has an empty semantic signature."""

    code = "unlocalizable_map"


class Unreachable(MapError):
    """Start and goal lie in disconnected parts of the graph."""

    code = "unreachable"


class DegeneratePath(MapError):
    """A path with fewer than two nodes cannot be chunked."""

    code = "degenerate_path"


class ClientFailure(MapError):
    """The external language-model client failed or timed out."""

    code = "client_failure"


class BundleError(MapError):
    """A map bundle is missing, corrupt, or version-incompatible."""

    code = "bundle_error"


class ConfigError(MapError):
    """A configuration file contains unknown keys or invalid values."""

    code = "config_error"
