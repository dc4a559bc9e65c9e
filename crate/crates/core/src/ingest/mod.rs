//! Getting data in: AFC taps, journeys, daily profiles, event calendars,
//! train positions, and the synthetic generator that stands in for a real
//! fare-collection feed.

mod afc;
mod events;
mod journeys;
mod positions;
mod profiles;
pub mod synthetic;

pub use afc::{parse_afc, write_afc, Direction, RowError, TapEvent, AFC_HEADER};
pub use events::{exog_at, load_events, EventCalendar, EventCalendarEntry};
pub use journeys::{link_journeys, Journey, JourneyLinker, LinkOptions, LinkOutcome, DEFAULT_MAX_GAP_HOURS};
pub use positions::{parse_positions, TrainPositionReport};
pub use profiles::{build_all_profiles, build_daily_profiles, DailyProfile};
pub use synthetic::{generate_days, generate_synthetic_day, DayPlan, GenSpec};
