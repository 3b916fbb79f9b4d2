"""Global-view distributed n-d arrays over a simulated message-passing cluster."""
from .darray import DArray, bincount, create, cumsum, ew, ew_inplace, iterate, load, reduce, save, sqrt
from .distributor import Distributor, DistributorFactory, Layout, Strategy, get_factory, plan, plan_freeform
from .librarian import DeadReferenceError, Librarian, get_librarian, lookup
from .tensor import UnsupportedKeyError
from .transport import (
    ClusterError,
    CommContext,
    DeadlockError,
    RankFailure,
    SimulatedCluster,
    current_context,
    run_cluster,
)

__version__ = "0.1.0"
