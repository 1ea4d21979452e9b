//! Exogenous market dynamics: VAR(1) on log-returns, path simulation, and
//! price-history ingestion.

mod prices;
mod simulate;
mod synthetic;
mod var;

pub use prices::{log_returns, read_price_csv, PriceTable};
pub use simulate::{draw_admissible_control, simulate_paths, MarketPaths, MarketSpec, MarketSpecDoc};
pub use synthetic::synthetic_market;
pub use var::{calibrate_var, psd_factor, VarModel, VarModelDoc};
