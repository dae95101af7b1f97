//! Trial records reshaped to two product rows per trial.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use choicebench_core::catalog::{Catalog, Price};
use choicebench_core::grid::ExperimentConfig;
use choicebench_core::interventions::{Intervention, Slot, Valence};
use choicebench_core::pairing::ProductPair;
use choicebench_core::records::{Source, TrialRecord};

use crate::frame::Frame;
use crate::StatsError;

/// Model label used for human records.
pub const HUMAN_MODEL: &str = "human";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRow {
    pub trial_id: String,
    pub slot: Slot,
    pub y: u8,
    pub c: u8,
    /// Absent when ratings are matched by design.
    pub r: Option<u8>,
    /// 1 for the slot viewed first.
    pub p: u8,
    pub n: u8,
    pub model: String,
    pub nudge_text: String,
    pub category: String,
    /// Relative price advantage over the other product, in percent.
    pub price_advantage: f64,
}

fn displayed_prices(interventions: &[Intervention], mut prices: [Price; 2]) -> [Price; 2] {
    for i in interventions {
        match i {
            Intervention::MatchPrice { slot, price } => prices[slot.index()] = *price,
            Intervention::Compose { steps } => prices = displayed_prices(steps, prices),
            Intervention::InjectNudge { .. } => {}
        }
    }
    prices
}

/// Two rows per chosen trial; timeouts and failures contribute nothing.
/// Human and agent records are handled identically except for the model
/// label.
pub fn reshape_trials(
    records: &[TrialRecord],
    configs: &BTreeMap<String, ExperimentConfig>,
    pairs: &BTreeMap<String, ProductPair>,
    catalog: &Catalog,
) -> Result<Vec<ProductRow>, StatsError> {
    let mut rows = Vec::with_capacity(records.len() * 2);
    for record in records {
        let Some(chosen) = record.outcome.chosen_slot() else { continue };
        let config = configs
            .get(&record.config_id)
            .ok_or_else(|| StatsError::UnknownReference(format!("config {}", record.config_id)))?;
        let pair = pairs
            .get(&config.pair_id)
            .ok_or_else(|| StatsError::UnknownReference(format!("pair {}", config.pair_id)))?;
        let product = |id: &str| {
            catalog
                .get(id)
                .ok_or_else(|| StatsError::UnknownReference(format!("product {id}")))
        };
        let products = [product(&pair.slot_a)?, product(&pair.slot_b)?];
        let prices = displayed_prices(&config.interventions, [products[0].price, products[1].price]);
        let nudged = config.condition.nudged_slot().map(|s| match config.valence {
            Valence::Positive => s,
            Valence::Negative => s.other(),
        });
        let model = match record.source {
            Source::Agent => config.model.clone(),
            Source::Human => HUMAN_MODEL.to_string(),
        };
        let trial_id = record.key();
        for slot in Slot::BOTH {
            let (me, other) = (slot.index(), slot.other().index());
            let lo = prices[0].min(prices[1]).cents().max(1) as f64;
            rows.push(ProductRow {
                trial_id: trial_id.clone(),
                slot,
                y: (slot == chosen) as u8,
                c: (prices[me] < prices[other]) as u8,
                r: (!config.regime.ratings_matched()).then(|| (products[me].rating > products[other].rating) as u8),
                p: (slot == Slot::A) as u8,
                n: (nudged == Some(slot)) as u8,
                model: model.clone(),
                nudge_text: config.nudge_id.clone(),
                category: pair.category.clone(),
                price_advantage: (prices[other].cents() as f64 - prices[me].cents() as f64) / lo * 100.0,
            });
        }
    }
    Ok(rows)
}

/// Frame with columns y, c, r (when every row has it), p, n, model,
/// nudge_text, category, trial and price_advantage.
pub fn rows_to_frame(rows: &[ProductRow]) -> Result<Frame, StatsError> {
    let num = |f: &dyn Fn(&ProductRow) -> u8| rows.iter().map(|r| f(r) as f64).collect::<Vec<_>>();
    let mut frame = Frame::new();
    frame.add_numeric("y", num(&|r| r.y))?;
    frame.add_numeric("c", num(&|r| r.c))?;
    if !rows.is_empty() && rows.iter().all(|r| r.r.is_some()) {
        frame.add_numeric("r", num(&|r| r.r.unwrap_or(0)))?;
    }
    frame.add_numeric("p", num(&|r| r.p))?;
    frame.add_numeric("n", num(&|r| r.n))?;
    let text = |f: &dyn Fn(&ProductRow) -> &str| rows.iter().map(|r| f(r).to_string()).collect::<Vec<_>>();
    frame.add_factor("model", &text(&|r| &r.model))?;
    frame.add_factor("nudge_text", &text(&|r| &r.nudge_text))?;
    frame.add_factor("category", &text(&|r| &r.category))?;
    frame.add_factor("trial", &text(&|r| &r.trial_id))?;
    frame.add_numeric("price_advantage", rows.iter().map(|r| r.price_advantage).collect())?;
    Ok(frame)
}
