use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{Experiment, ImageVerdict, PairwiseAnnotation, Preference, RankingAnnotation};

/// What a rater sees for one position: an opaque slot label and the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedSlot {
    pub slot: String,
    pub image: String,
}

pub fn slot_label(position: usize) -> String {
    format!("slot-{}", position + 1)
}

fn order_seed(shuffle_seed: u64, rater_id: &str, item_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(shuffle_seed.to_le_bytes());
    for part in [rater_id, item_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Systems in the order shown to `rater_id` for `item_id`.
fn shuffled_systems<'a>(exp: &'a Experiment, rater_id: &str, item_id: &str) -> Result<Vec<&'a String>> {
    exp.item(item_id)?;
    let mut systems: Vec<&String> = exp.systems.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(order_seed(exp.shuffle_seed, rater_id, item_id));
    systems.shuffle(&mut rng);
    Ok(systems)
}

/// Deterministic blinded ordering of an item's images for one rater.
pub fn presentation_order(exp: &Experiment, rater_id: &str, item_id: &str) -> Result<Vec<BlindedSlot>> {
    let item = exp.item(item_id)?;
    Ok(shuffled_systems(exp, rater_id, item_id)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| BlindedSlot { slot: slot_label(i), image: item.images[s].clone() })
        .collect())
}

fn slot_map<'a>(exp: &'a Experiment, rater_id: &str, item_id: &str) -> Result<BTreeMap<String, &'a String>> {
    Ok(shuffled_systems(exp, rater_id, item_id)?.into_iter().enumerate().map(|(i, s)| (slot_label(i), s)).collect())
}

fn unslot<V: Clone>(slots: &BTreeMap<String, &String>, by_slot: &BTreeMap<String, V>) -> Result<BTreeMap<String, V>> {
    by_slot
        .iter()
        .map(|(slot, v)| {
            slots
                .get(slot)
                .map(|s| ((*s).clone(), v.clone()))
                .ok_or_else(|| Error::Validation(format!("unknown slot `{slot}`")))
        })
        .collect()
}

/// Maps a slot-keyed ranking submission back onto system ids.
pub fn resolve_ranking(
    exp: &Experiment,
    rater_id: &str,
    item_id: &str,
    slot_ranks: &BTreeMap<String, u32>,
    slot_verdicts: &BTreeMap<String, ImageVerdict>,
) -> Result<RankingAnnotation> {
    let slots = slot_map(exp, rater_id, item_id)?;
    Ok(RankingAnnotation {
        experiment_id: exp.id.clone(),
        rater_id: rater_id.to_owned(),
        item_id: item_id.to_owned(),
        ranks: unslot(&slots, slot_ranks)?,
        verdicts: unslot(&slots, slot_verdicts)?,
    })
}

/// Maps a slot-keyed pairwise vote (`preferred = None` for a tie) onto systems A and B.
pub fn resolve_pairwise(
    exp: &Experiment,
    rater_id: &str,
    item_id: &str,
    preferred: Option<&str>,
    slot_verdicts: &BTreeMap<String, ImageVerdict>,
) -> Result<PairwiseAnnotation> {
    let slots = slot_map(exp, rater_id, item_id)?;
    let mut verdicts = unslot(&slots, slot_verdicts)?;
    let (a, b) = (&exp.systems[0], &exp.systems[1]);
    let verdict = match preferred {
        None => Preference::Tie,
        Some(slot) => match slots.get(slot) {
            Some(s) if *s == a => Preference::PreferA,
            Some(_) => Preference::PreferB,
            None => return Err(Error::Validation(format!("unknown slot `{slot}`"))),
        },
    };
    let take = |v: &mut BTreeMap<String, ImageVerdict>, s: &String| {
        v.remove(s).ok_or_else(|| Error::Validation("both images need a verdict".into()))
    };
    Ok(PairwiseAnnotation {
        experiment_id: exp.id.clone(),
        item_id: item_id.to_owned(),
        rater_id: rater_id.to_owned(),
        verdict,
        verdict_a: take(&mut verdicts, a)?,
        verdict_b: take(&mut verdicts, b)?,
    })
}
