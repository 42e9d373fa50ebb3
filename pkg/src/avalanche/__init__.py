"""Information avalanches on the Gaussian statistical manifold.

Sandpile avalanches drive volatility jumps; the market's path between
states is compared against the Fisher-Rao geodesic, and the excess length of
a constant-Sharpe path is harvested by a dynamic hedging strategy.
"""

from .errors import (
    ApexSingularity,
    AvalancheError,
    CoincidentPoints,
    ConfigError,
    DomainError,
    InsufficientTail,
    NonConvergence,
    SharpeMismatch,
    VerticalGeodesic,
    ZeroDelta,
)
from .geometry import (
    DiscretePath,
    GeodesicArc,
    LengthConvention,
    ManifoldPoint,
    christoffel,
    excess_action,
    geodesic_arc,
    geodesic_length,
    infinitesimal_excess,
    integrate_geodesic,
    linear_path_length,
    local_geodesic_slope,
    metric_speed,
    minimize_path_length,
    path_length,
)
from .market import (
    MappingKind,
    MarketState,
    MarketTrajectory,
    OffManifoldState,
    PathMode,
    Regime,
    SimulationConfig,
    VolMapping,
    apply_avalanche,
    onsager_step,
    relax_between_avalanches,
    simulate,
    transition_path,
)
from .sandpile import (
    AvalancheEvent,
    EventLog,
    ExponentialIntensity,
    HardThreshold,
    RngStream,
    SandpileLattice,
    SlopeState,
    add_grain,
    drive_to_soc,
    fit_power_law_tail,
    step_slope,
)
from .strategy import (
    CapitalSchedule,
    HedgePosition,
    QuadraticValuation,
    StrategyLedger,
    backtest,
    harvest_step,
    hedge_ratio,
    prediction_gap,
)

__version__ = "0.1.0"
