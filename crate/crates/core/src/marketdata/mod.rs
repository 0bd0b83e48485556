//! Price ingestion, NAV profiles, engineered features and windowing.

mod features;
mod nav;
mod prices;
mod windows;

pub use features::{
    compute_features, ema, wilder_rsi, FeatureTensor, FEATURE_NAMES, HORIZONS, MACD_FAST,
    MACD_SLOW, N_FEATURES, RSI_PERIOD, WARMUP,
};
pub use nav::{compute_nav, NavMatrix};
pub use prices::{
    load_prices, read_prices, write_prices, LoadedPrices, PriceMatrix, SectorMap,
    MAX_MISSING_FRACTION,
};
pub use windows::{make_windows, standardize_window, WindowSlice, DEFAULT_WINDOW, STANDARDIZE_EPS};
