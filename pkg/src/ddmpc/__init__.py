"""Data-driven predictive steering control from recorded input/output data."""

from .baselines import KinematicMPC, KinMpcConfig, PidConfig, PIDSteering
from .controller import (
    DataDictionary,
    DDMPCController,
    DdmpcConfig,
    DdmpcSolution,
    HistoryBuffer,
    InsufficientDataError,
    NotPersistentlyExcitingError,
    assemble_qp,
    build_dictionary,
    ddmpc_step,
    minimum_samples,
    solve_qp,
)
from .qp import ActiveSetQP, QpProblem, QpResult, kkt_residuals, solve_dense_qp
from .scenario import (
    ReferencePath,
    RunReport,
    ScenarioConfig,
    collect_dictionary_data,
    compare_controllers,
    make_dual_lane_switch,
    run_closed_loop,
)
from .trajectory import (
    HankelMatrix,
    PEResult,
    Signal,
    TrajectoryData,
    TrajectoryPreprocessor,
    build_hankel,
    check_persistent_excitation,
    load_trajectory,
    preprocess,
    save_trajectory,
)
from .vehicle import SteerCommand, VehicleParams, VehicleState, collect_open_loop, make_excitation

__version__ = "0.1.0"
