use std::collections::BTreeMap;

use choicebench_core::catalog::Price;
use choicebench_core::interventions::{
    apply_nudge, builtin_nudges, match_price, render_nudge, PageSet, SubstitutionTable,
};
use choicebench_core::page::render_product_page;
use choicebench_core::synth::synthetic_catalog;
use choicebench_core::{Intervention, Product, Slot};
use proptest::prelude::*;

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn products(n: usize) -> Vec<Product> {
    synthetic_catalog(200, 4).products().step_by(200 / n).take(n).cloned().collect()
}

fn pages(a: &Product, b: &Product) -> PageSet {
    PageSet::new(render_product_page(a), render_product_page(b))
}

/// The line after the title heading, as rendered.
fn line_after_title(markup: &str) -> Option<&str> {
    let mut lines = markup.lines();
    lines.find(|l| l.trim_start().starts_with("<h1"))?;
    lines.next()
}

#[test]
fn every_nudge_lands_once_right_after_the_title() {
    let table = SubstitutionTable::builtin();
    let items = products(20);
    assert_eq!(items.len(), 20);
    for nudge in builtin_nudges() {
        for (i, product) in items.iter().enumerate() {
            let text = render_nudge(&nudge, &product.category, &BTreeMap::new(), &table).unwrap();
            let other = &items[(i + 1) % items.len()];
            let base = pages(product, other);
            let nudged = apply_nudge(&base, Slot::A, &text).unwrap();
            let markup = nudged.page(Slot::A).markup();
            let escaped = html_escape(&text);
            assert_eq!(markup.matches(&escaped).count(), 1, "{} on {}", nudge.nudge_id, product.id);
            let next = line_after_title(&markup).unwrap();
            assert!(next.contains("data-note=\"promo\"") && next.contains(&escaped), "{next}");
            assert_eq!(nudged.page(Slot::B), base.page(Slot::B));
            assert_eq!(nudged.strip_inserted().page(Slot::A).markup(), base.page(Slot::A).markup());
        }
    }
}

#[test]
fn match_price_changes_only_the_price() {
    let items = products(20);
    for pair in items.chunks(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let base = pages(a, b);
        let target = a.price.min(b.price);
        let matched = match_price(&match_price(&base, Slot::A, target).unwrap(), Slot::B, target).unwrap();
        for (slot, product) in [(Slot::A, a), (Slot::B, b)] {
            let expected = base
                .page(slot)
                .markup()
                .replace(&product.price.display_usd(), &target.display_usd())
                .replace(
                    &format!("data-price-amount=\"{}\"", product.price),
                    &format!("data-price-amount=\"{target}\""),
                );
            assert_eq!(matched.page(slot).markup(), expected);
        }
        let shown: Vec<String> = Slot::BOTH
            .iter()
            .map(|s| {
                let m = matched.page(*s).markup();
                let line = m.lines().find(|l| l.contains("class=\"price\"")).unwrap().to_string();
                line.split('>').nth(1).unwrap().split('<').next().unwrap().to_string()
            })
            .collect();
        assert_eq!(shown[0], shown[1]);
    }
}

#[test]
fn identity_leaves_pages_untouched() {
    let items = products(2);
    let base = pages(&items[0], &items[1]);
    assert_eq!(Intervention::identity().apply(&base).unwrap(), base);
}

proptest! {
    #[test]
    fn strip_inverts_any_nudge_sequence(
        texts in prop::collection::vec("[ -~]{1,60}", 1..4),
        slots in prop::collection::vec(any::<bool>(), 4),
        cents in 1u64..1_000_000,
    ) {
        let items = products(2);
        let base = pages(&items[0], &items[1]);
        let mut cur = base.clone();
        for (t, s) in texts.iter().zip(&slots) {
            cur = apply_nudge(&cur, if *s { Slot::A } else { Slot::B }, t).unwrap();
        }
        prop_assert_eq!(cur.strip_inserted(), base.clone());
        let price = Price::from_cents(cents);
        let priced = match_price(&base, Slot::B, price).unwrap();
        let both = apply_nudge(&priced, Slot::B, &texts[0]).unwrap();
        let other_order = match_price(&apply_nudge(&base, Slot::B, &texts[0]).unwrap(), Slot::B, price).unwrap();
        prop_assert_eq!(both, other_order);
    }
}
