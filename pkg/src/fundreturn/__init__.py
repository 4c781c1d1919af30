"""Monte Carlo model of a group of pension funds and its average rate of return."""

from .funds import (FundControls, FundPaths, FundState, ResidualReport, consistency_residuals,
                    derive_holdings, simulate_funds, step_fund_state)
from .ito import ito_integral, ito_integral_series, log_increment, quadratic_variation
from .market import (AssetPaths, BrownianDriver, MarketParams, PiecewiseConstant, TimeGrid,
                     ValidationError, build_time_grid, sample_driver, sample_drivers, simulate_assets)
from .returns import (ReturnSeries, accumulate_R, average_return, average_return_drift_flows,
                      deterministic_average_return, discrete_average_return, discrete_snapshots,
                      per_fund_return, return_series)
from .scenario import Scenario, ScenarioError, parse_scenario, scenario_from_dict, simulate, simulate_nested
from .verify import (MartingaleTestSpec, TestReport, check_property1, check_property2, check_property3,
                     check_property4, check_residuals, convergence_study, martingale_test, run_suite,
                     submartingale_test)

__version__ = "0.1.0"
