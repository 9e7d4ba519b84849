//! Core library for forecasting rare leadership-change events on
//! country-month panels.
//!
//! The pieces mirror the batch workflow: ingest and transform a panel
//! ([`panel`], [`events`]), derive duration variables from a leader-change
//! history ([`spells`]), construct spatially lagged covariates ([`spatial`]),
//! classify covariates as static or dynamic ([`variance`]), fit
//! split-population Weibull models ([`spdur`]), average calibrated component
//! forecasts ([`ebma`]), score everything ([`eval`]), and roll monthly
//! conditional hazards into horizon probabilities ([`forecast`]).

pub mod calendar;
pub mod ebma;
pub mod eval;
pub mod events;
pub mod forecast;
pub mod optim;
pub mod panel;
pub mod spatial;
pub mod spdur;
pub mod spells;
pub mod variance;

pub use calendar::{CountryId, YearMonth};
pub use panel::{Panel, PanelRecord, PanelSchema};
pub use spdur::{SpdurFit, SpdurSpec};
