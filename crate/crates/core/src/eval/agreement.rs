//! Chance-corrected agreement statistics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Fleiss' kappa over an `items × categories` count matrix where every row sums to `raters`.
///
/// Perfect observed agreement returns exactly one before the chance term is consulted.
pub fn fleiss_kappa<T: Scalar>(counts: &[Vec<usize>], raters: usize) -> Result<T> {
    let n_items = counts.len();
    if n_items == 0 {
        return Err(Error::InvalidInput("fleiss kappa needs at least one item".into()));
    }
    if raters < 2 {
        return Err(Error::InvalidInput(format!("fleiss kappa needs at least 2 raters, got {raters}")));
    }
    let k = counts[0].len();
    if k == 0 {
        return Err(Error::InvalidInput("count matrix has no categories".into()));
    }
    for (i, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(Error::InvalidInput(format!("row {i} has {} categories, expected {k}", row.len())));
        }
        let sum: usize = row.iter().sum();
        if sum != raters {
            return Err(Error::InvalidInput(format!("row {i} sums to {sum}, expected {raters}")));
        }
    }

    let total = n_items * raters;
    let sum_sq: usize = counts.iter().flatten().map(|&c| c * c).sum();
    // P̄ = (Σ n_ij² − N n) / (N n (n − 1))
    if sum_sq == total * raters {
        return Ok(T::one());
    }
    let p_bar = T::ratio(sum_sq - total, total * (raters - 1));

    let mut p_e = T::zero();
    for j in 0..k {
        let col: usize = counts.iter().map(|row| row[j]).sum();
        let p_j = T::ratio(col, total);
        p_e = p_e + p_j.clone() * p_j;
    }
    if p_e == T::one() {
        return Err(Error::UndefinedMetric("fleiss kappa with chance agreement of 1".into()));
    }
    Ok((p_bar - p_e.clone()) / (T::one() - p_e))
}

/// Cohen's kappa for two raters labelling the same items in the same order.
pub fn cohen_kappa<T: Scalar, L: Ord>(a: &[L], b: &[L]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("rater label counts differ: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::InvalidInput("cohen kappa over no items".into()));
    }
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    let mut marg: BTreeMap<&L, (usize, usize)> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        marg.entry(x).or_default().0 += 1;
        marg.entry(y).or_default().1 += 1;
    }
    let chance: usize = marg.values().map(|(ca, cb)| ca * cb).sum();
    if chance == n * n {
        // Both raters used one identical category throughout.
        return Ok(T::one());
    }
    let p_o = T::ratio(agree, n);
    let p_e = T::ratio(chance, n * n);
    Ok((p_o - p_e.clone()) / (T::one() - p_e))
}

/// Mean of Cohen's kappa over all rater pairs. `labels` maps rater → item → label and
/// every rater must cover the same items.
pub fn cohen_kappa_mean_pairwise<T: Scalar, L: Ord>(labels: &BTreeMap<String, BTreeMap<String, L>>) -> Result<T> {
    if labels.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 raters, got {}", labels.len())));
    }
    let raters: Vec<(&String, &BTreeMap<String, L>)> = labels.iter().collect();
    let items: Vec<&String> = raters[0].1.keys().collect();
    for (r, m) in &raters[1..] {
        if m.keys().ne(items.iter().copied()) {
            return Err(Error::InvalidInput(format!("rater `{r}` does not cover the same items as `{}`", raters[0].0)));
        }
    }
    let mut kappas = Vec::new();
    for i in 0..raters.len() {
        for j in i + 1..raters.len() {
            let a: Vec<&L> = raters[i].1.values().collect();
            let b: Vec<&L> = raters[j].1.values().collect();
            kappas.push(cohen_kappa::<T, &L>(&a, &b)?);
        }
    }
    Ok(T::mean(kappas).expect("at least one rater pair"))
}
