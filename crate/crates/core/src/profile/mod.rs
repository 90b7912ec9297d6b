//! Profiling, profile-driven directives, schedules and protection policies.

mod enumerate;
mod pf;
mod policy;
mod schedule;
mod search;
mod session;

pub use enumerate::{enumerate_schedules, method_universe, placed_universe, EnumError};
pub use pf::{pf_directive, pf_next_directive, update_profile, BranchCount, PfConfig, Profile};
pub use policy::{enforce, is_compliant, Mode, Policy};
pub use schedule::{Schedule, ScheduleEntry, ScheduleOrigin, ScheduleParseError, Trigger};
pub use search::{adversarial_search, SearchResult};
pub use session::{PfSource, Session};
