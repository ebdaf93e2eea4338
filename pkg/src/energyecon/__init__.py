"""Solvers for economies where energy transfer is the binding constraint.

The library covers the single-agent problem (utility maximization against
an energy-surplus budget), the production side (transfer-minimizing
allocation of prime-mover services, energy-sector surplus schedules,
capital planning, surplus allocation), exchange between agents along
marginal-transfer curves, and a money layer that prices goods in real and
nominal terms against their embodied energies.
"""

from ._version import __version__
from .allocation import (
    AllocationPlan,
    allocate_surplus,
    effective_assignment_check,
    implied_rationing,
)
from .autarky import (
    AutarkyEquilibrium,
    consumer_foc_residual,
    discount_factors,
    euler_residual,
    final_demand,
    oracle_utility_gap,
    solve_autarky,
)
from .costs import (
    average_cost,
    cheapest_linear_input,
    conditional_demand,
    marginal_cost,
    output_at_marginal_cost,
)
from .energy_sector import (
    CapitalPlan,
    EroiReport,
    SurplusPlan,
    aggregate_power,
    capital_value_streams,
    endowment_path,
    eroi_and_discount,
    one_step_discounts,
    plan_capital,
    plan_energy_surplus,
    power_scarcity_cost,
)
from .errors import (
    DegenerateFitError,
    EnergyEconError,
    FiatMoneyError,
    InconsistentAssignmentsError,
    InfeasibleError,
    InsufficientSurplusError,
    IoFailure,
    MissingHistoryError,
    NoConvergenceError,
    NoFeasibleGridPointError,
    NonFiniteEvaluationError,
    NonFiniteMarginalError,
    UtilityDomainError,
    ValidationError,
)
from .exchange import (
    BilateralTrade,
    MetcCurve,
    TatonnementResult,
    TradeAgent,
    agent_from_equilibrium,
    equalize_metc,
    gains_from_trade,
    marginal_transfer_at,
    metc_curve,
    multi_agent_tatonnement,
    optimal_bilateral_trade,
)
from .model import (
    COBB_DOUGLAS,
    COMMODITY_MONEY,
    FIAT_MONEY,
    LINEAR,
    WEIGHTED_LOG,
    EconomyScenario,
    EnergyGoodSpec,
    FinalGoodSpec,
    MoneySettings,
    PrimeMoverSpec,
    ProductionTech,
    SolutionBundle,
    UtilityModel,
    ensure_valid,
    eval_production,
    eval_utility,
    validate_scenario,
)
from .money import (
    EmbodiedTable,
    InflationReport,
    MoneyState,
    PriceTable,
    ProportionalityFit,
    embodied_energy,
    embodied_markup_fd,
    inflation_and_dynamics,
    money_state,
    price_table,
    proportionality_report,
    select_money_good,
    service_charges,
    transfer_embodied_gap,
)
from .numerics import (
    DEFAULT_SETTINGS,
    FixedPointResult,
    GridOracleResult,
    KktResiduals,
    KktResult,
    SolverSettings,
    finite_diff_gradient,
    fixed_point_iterate,
    grid_oracle,
    kkt_residual_report,
    kkt_solve,
)
from .producer import (
    ProducerProblem,
    ProducerSolution,
    TransferDecomposition,
    decompose_marginal_transfer,
    solve_transfer_min,
)
from .reports import (
    CheckRow,
    PRICE_COLUMNS,
    RunReport,
    price_rows,
    rows_to_csv,
    verify_scenario,
)
from .scenario_io import (
    canonical_json,
    dump_scenario,
    load_scenario,
    scenario_from_dict,
    scenario_hash,
    scenario_to_dict,
)
