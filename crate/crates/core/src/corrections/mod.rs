//! Error corrections applied on top of plain QDQ: macro block scaling (MBS),
//! outlier fallback (OF) and the adaptive quantization noise (AQN) schedule.

mod aqn;
mod mbs;
mod of;

pub use aqn::{aqn_apply, aqn_schedule, AqnSchedule};
pub use mbs::{
    mbs_qdq, mbs_qdq_with_code, mbs_select_mantissa, MbsConfig, MbsOutput, MbsSelection, MBS_LEVELS,
};
pub use of::{dz_recovery_rate, of_qdq, DzRecovery, OfConfig, OfOutput};
