//! Greedy and nucleus decoding over sparse next-token distributions.
//!
//! [`NGramModel::next_dist`] splits P(w | ctx) into a small boosted set (the
//! tokens with higher-order evidence, already carrying their full
//! probability) and a smoothed tail where P(w) = beta * P_unigram(w). The
//! nucleus walk merges the boosted entries with the precomputed unigram rank
//! order, so each step costs O(|boosted| + |nucleus|) instead of touching the
//! whole vocabulary.
//!
//! Temperature rescales probabilities by p^(1/T) before truncation. The map
//! is strictly monotone, so the sorted order and argmax are unchanged; only
//! the mass assigned to each rank moves. Normalization uses
//! Z = sum over the full vocabulary of p^(1/T), computed without
//! materializing it: boosted terms exactly, the tail via
//! beta^(1/T) * (sum of all unigram powers - boosted unigram powers).

use rand::Rng;

use super::ngram::NGramModel;
use super::LmError;

/// Next-token distribution after some context, in sampling-friendly form.
/// `entries` hold full probabilities sorted by (probability desc, id asc);
/// every token absent from `entries` has probability `beta * uni_probs[id]`.
pub(crate) struct NextDist {
    pub entries: Vec<(u32, f64)>,
    pub beta: f64,
}

/// Per-call temperature tables. For T = 1 this is free; otherwise the unigram
/// powers are computed once per generate call, not once per step.
pub(crate) struct PowCache {
    inv_t: f64,
    upow: Option<Vec<f64>>,
    total_pow: f64,
}

impl PowCache {
    pub(crate) fn new(model: &NGramModel, temperature: f64) -> PowCache {
        if temperature == 1.0 {
            PowCache {
                inv_t: 1.0,
                upow: None,
                total_pow: model.uni_prob_total(),
            }
        } else {
            let inv_t = temperature.recip();
            let upow: Vec<f64> = model.uni_probs().iter().map(|p| p.powf(inv_t)).collect();
            let total_pow = upow.iter().sum();
            PowCache {
                inv_t,
                upow: Some(upow),
                total_pow,
            }
        }
    }

    fn transform(&self, p: f64) -> f64 {
        match self.upow {
            None => p,
            Some(_) => p.powf(self.inv_t),
        }
    }

    fn uni_pow(&self, model: &NGramModel, id: u32) -> f64 {
        match &self.upow {
            None => model.uni_probs()[id as usize],
            Some(v) => v[id as usize],
        }
    }
}

/// Argmax with ties broken toward the smallest token id. Temperature never
/// changes the argmax, so greedy decoding ignores it entirely.
pub(crate) fn greedy_token(model: &NGramModel, dist: &NextDist) -> u32 {
    let boosted = boosted_ids(dist);
    let best_boost = dist.entries.first().copied();
    let best_tail = model
        .uni_by_rank()
        .iter()
        .find(|id| boosted.binary_search(id).is_err())
        .map(|&id| (id, dist.beta * model.uni_probs()[id as usize]));
    match (best_boost, best_tail) {
        (Some((bi, bp)), Some((ti, tp))) => {
            if bp > tp || (bp == tp && bi < ti) {
                bi
            } else {
                ti
            }
        }
        (Some((bi, _)), None) => bi,
        (None, Some((ti, _))) => ti,
        (None, None) => unreachable!("vocabulary always holds the reserved tokens"),
    }
}

/// Temperature-then-truncate nucleus sampling over a sparse distribution.
pub(crate) fn nucleus_token<R: Rng + ?Sized>(
    model: &NGramModel,
    dist: &NextDist,
    pow: &PowCache,
    top_p: f64,
    rng: &mut R,
) -> u32 {
    let (kept, cum) = nucleus_kept(model, dist, pow, top_p);
    debug_assert!(!kept.is_empty());
    pick(&kept, cum, rng)
}

fn boosted_ids(dist: &NextDist) -> Vec<u32> {
    let mut ids: Vec<u32> = dist.entries.iter().map(|&(id, _)| id).collect();
    ids.sort_unstable();
    ids
}

/// The smallest prefix of the temperature-adjusted distribution whose mass
/// reaches `top_p * Z`, as (token, transformed weight) pairs in rank order,
/// together with the kept mass. `top_p >= 1` keeps everything.
pub(crate) fn nucleus_kept(
    model: &NGramModel,
    dist: &NextDist,
    pow: &PowCache,
    top_p: f64,
) -> (Vec<(u32, f64)>, f64) {
    let boosted = boosted_ids(dist);
    let beta_pow = pow.transform(dist.beta);

    let boosted_upow: f64 = boosted.iter().map(|&id| pow.uni_pow(model, id)).sum();
    let z: f64 = dist.entries.iter().map(|&(_, p)| pow.transform(p)).sum::<f64>()
        + beta_pow * (pow.total_pow - boosted_upow);
    let threshold = if top_p >= 1.0 { f64::INFINITY } else { top_p * z };

    let rank = model.uni_by_rank();
    let mut kept: Vec<(u32, f64)> = Vec::new();
    let mut cum = 0.0f64;
    let mut bi = 0usize;
    let mut ui = 0usize;
    loop {
        // Transformed weight of the best remaining boosted / tail token.
        let b = dist.entries.get(bi).map(|&(id, p)| (id, pow.transform(p)));
        let t = loop {
            match rank.get(ui) {
                None => break None,
                Some(&id) if boosted.binary_search(&id).is_ok() => ui += 1,
                Some(&id) => break Some((id, beta_pow * pow.uni_pow(model, id))),
            }
        };
        let (id, w) = match (b, t) {
            (None, None) => break, // exhausted: keep the full distribution
            (Some(b), None) => {
                bi += 1;
                b
            }
            (None, Some(t)) => {
                ui += 1;
                t
            }
            (Some(b), Some(t)) => {
                if b.1 > t.1 || (b.1 == t.1 && b.0 < t.0) {
                    bi += 1;
                    b
                } else {
                    ui += 1;
                    t
                }
            }
        };
        kept.push((id, w));
        cum += w;
        if cum >= threshold {
            break;
        }
    }
    (kept, cum)
}

fn pick<R: Rng + ?Sized>(kept: &[(u32, f64)], cum: f64, rng: &mut R) -> u32 {
    let u = rng.random::<f64>() * cum;
    let mut acc = 0.0f64;
    let mut last_positive = kept[0].0;
    for &(id, w) in kept {
        if w > 0.0 {
            last_positive = id;
        }
        acc += w;
        if u < acc {
            return id;
        }
    }
    // Accumulation rounding can leave u marginally past the final acc.
    last_positive
}

/// Reference nucleus sampler over an explicit distribution: rescale by
/// p^(1/temperature), sort by (probability desc, index asc), keep the
/// smallest prefix reaching `top_p` of the rescaled mass, renormalize, draw.
/// Returns the sampled index. `probs` need not be normalized.
pub fn nucleus_sample_dist<R: Rng + ?Sized>(
    probs: &[f64],
    top_p: f64,
    temperature: f64,
    rng: &mut R,
) -> Result<usize, LmError> {
    if probs.is_empty() {
        return Err(LmError::InvalidPolicy("empty distribution".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(LmError::InvalidPolicy(
            "probabilities must be finite and non-negative".into(),
        ));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(LmError::InvalidPolicy(format!(
            "top_p must lie in (0, 1], got {top_p}"
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(LmError::InvalidPolicy(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if probs.iter().sum::<f64>() <= 0.0 {
        return Err(LmError::InvalidPolicy("distribution has no mass".into()));
    }

    let inv_t = temperature.recip();
    let w: Vec<f64> = if temperature == 1.0 {
        probs.to_vec()
    } else {
        probs.iter().map(|p| p.powf(inv_t)).collect()
    };
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_unstable_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
    let z: f64 = order.iter().map(|&i| w[i]).sum();
    let threshold = if top_p >= 1.0 { f64::INFINITY } else { top_p * z };

    let mut kept: Vec<(u32, f64)> = Vec::new();
    let mut cum = 0.0f64;
    for &i in &order {
        kept.push((i as u32, w[i]));
        cum += w[i];
        if cum >= threshold {
            break;
        }
    }
    Ok(pick(&kept, cum, rng) as usize)
}
