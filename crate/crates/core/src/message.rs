//! The unit of communication between workers.

use crate::proposal::ProposalDescriptor;
use crate::scalar::Scalar;
use crate::state::{Clock, WorkerId};
use crate::value::{CoordinateId, Value};

/// One broadcast update. Carries the sender's pre-update value and the
/// proposal parameters so the receiver can run the acceptance test without
/// any callback to the sender.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMessage<T: Scalar> {
    pub coord: CoordinateId,
    pub new_value: Value<T>,
    pub old_value: Value<T>,
    pub proposal: ProposalDescriptor<T>,
    pub sender: WorkerId,
    pub clock: Clock,
    /// Data-point index for exchangeable-model acceptance; `None` otherwise.
    pub data_ref: Option<usize>,
}

/// A message paired with its destination, as handed to a transport.
#[derive(Debug, Clone, PartialEq)]
pub struct Addressed<T: Scalar> {
    pub receiver: WorkerId,
    pub message: UpdateMessage<T>,
}
