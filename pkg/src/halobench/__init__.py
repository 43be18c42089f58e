"""Halo-exchange benchmark with non-blocking, persistent and partitioned strategies."""

from .comm import Comm, CommCounters, RequestStateError
from .exchange import STRATEGIES, Exchanger, MessagePlan, WorkerPool
from .grid import ProcessGrid, boundary_regions, build_process_grid, neighbor_rank
from .harness import BenchConfig, TimingReport, emit_csv, run_benchmark, run_verification
from .kernels import BACKEND
from .meshdata import LocalMesh, PackBuffer, pack, pack_slice, unpack
from .transport import World

__version__ = "0.1.0"
