//! Benjamini-Hochberg step-up adjustment, applied within families.

use std::collections::BTreeMap;

use crate::emm::EffectEstimate;
use crate::StatsError;

/// Adjusted p-values for one family.
pub fn bh_step_up(p: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(StatsError::InvalidPValue(*bad));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| p[*a].partial_cmp(&p[*b]).expect("checked range"));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p[i] * (m as f64 / (rank + 1) as f64));
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}

/// Adjusts `p` separately within each family label.
pub fn bh_adjust<S: AsRef<str>>(p: &[f64], families: &[S]) -> Result<Vec<f64>, StatsError> {
    if p.len() != families.len() {
        return Err(StatsError::InvalidInput("one family label per p-value".into()));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, f) in families.iter().enumerate() {
        members.entry(f.as_ref()).or_default().push(i);
    }
    let mut out = vec![0.0; p.len()];
    for idx in members.values() {
        let sub: Vec<f64> = idx.iter().map(|i| p[*i]).collect();
        for (i, a) in idx.iter().zip(bh_step_up(&sub)?) {
            out[*i] = a;
        }
    }
    Ok(out)
}

/// Fills `p_adjusted` on every estimate, grouping by `family`.
pub fn adjust_estimates(estimates: &mut [EffectEstimate]) -> Result<(), StatsError> {
    let p: Vec<f64> = estimates.iter().map(|e| e.p_value).collect();
    let families: Vec<String> = estimates.iter().map(|e| e.family.clone()).collect();
    for (e, a) in estimates.iter_mut().zip(bh_adjust(&p, &families)?) {
        e.p_adjusted = a;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_for_one_value() {
        assert_eq!(bh_step_up(&[0.03]).unwrap(), vec![0.03]);
    }

    #[test]
    fn textbook_example() {
        let adj = bh_step_up(&[0.01, 0.02, 0.03, 0.04]).unwrap();
        for a in adj {
            assert!((a - 0.04).abs() < 1e-15);
        }
        let adj = bh_step_up(&[0.04, 0.001, 0.5]).unwrap();
        assert!((adj[1] - 0.003).abs() < 1e-15);
        assert!((adj[0] - 0.06).abs() < 1e-15);
        assert_eq!(adj[2], 0.5);
    }

    #[test]
    fn families_are_independent() {
        let p = [0.01, 0.2, 0.02, 0.04];
        let fam = ["a", "b", "a", "b"];
        let adj = bh_adjust(&p, &fam).unwrap();
        let a = bh_step_up(&[0.01, 0.02]).unwrap();
        let b = bh_step_up(&[0.2, 0.04]).unwrap();
        assert_eq!(adj, vec![a[0], b[0], a[1], b[1]]);
    }

    #[test]
    fn rejects_out_of_range() {
        assert_eq!(bh_step_up(&[0.1, 1.5]), Err(StatsError::InvalidPValue(1.5)));
        assert!(bh_step_up(&[f64::NAN]).is_err());
    }
}
