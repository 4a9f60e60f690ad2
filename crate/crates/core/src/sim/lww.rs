//! Last-writer-wins resolution used when applying replicated items.

use crate::kv::StoredItem;
use crate::protocol::{CommitStatus, ATTR_STATUS, ATTR_VER};

use super::SimError;

fn version_text(item: &StoredItem) -> Result<&str, SimError> {
    item.get_str(ATTR_VER)
        .ok_or_else(|| SimError::MissingVersionAttribute(format!("{:?}", item.key())))
}

fn status_rank(item: &StoredItem) -> u8 {
    match item.get_str(ATTR_STATUS).and_then(CommitStatus::parse) {
        Some(CommitStatus::Committed) => 2,
        Some(CommitStatus::Writing) => 1,
        None => 0,
    }
}

/// Whether `incoming` should replace `existing`.
///
/// The greater `Ver` wins. Equal versions only occur for the two writes of a
/// two-phase metadata record, where `COMMITTED` must beat `WRITING` whatever
/// the arrival order; any remaining tie is settled by comparing attributes so
/// every region picks the same winner.
pub fn lww_prefers_incoming(existing: Option<&StoredItem>, incoming: &StoredItem) -> Result<bool, SimError> {
    let incoming_ver = version_text(incoming)?;
    let Some(existing) = existing else {
        return Ok(true);
    };
    let existing_ver = version_text(existing)?;
    let ordering = incoming_ver
        .cmp(existing_ver)
        .then_with(|| status_rank(incoming).cmp(&status_rank(existing)))
        .then_with(|| incoming.attributes().cmp(existing.attributes()));
    Ok(ordering.is_gt())
}

pub fn lww_merge(existing: Option<&StoredItem>, incoming: &StoredItem) -> Result<StoredItem, SimError> {
    Ok(match existing {
        Some(e) if !lww_prefers_incoming(Some(e), incoming)? => e.clone(),
        _ => {
            version_text(incoming)?;
            incoming.clone()
        }
    })
}
