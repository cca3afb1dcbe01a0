//! Synthetic gradually shifting domain sequences.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seeding::{self, TAG_DOMAIN_GEN};

use super::domain::{Domain, DomainSequence, ShiftKind};

/// Two-moons point clouds rotated about the origin, `t * total_angle / T`
/// degrees at domain t. One base draw is shared by every domain, so the
/// point sets are paired across domains and identical when the angle is 0.
pub fn gen_rotating_moons(
    n_source: usize,
    n: usize,
    t_count: usize,
    total_angle_deg: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<DomainSequence> {
    check_sizes(n_source, n, t_count)?;
    if noise_sd < 0.0 || !noise_sd.is_finite() || !total_angle_deg.is_finite() {
        return Err(Error::InvalidParam("bad moons parameters".into()));
    }
    let base_n = n_source.max(n);
    let mut rng = seeding::derived_rng(seed, &[TAG_DOMAIN_GEN, 0]);
    let noise = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE)).unwrap();
    let mut base = Vec::with_capacity(base_n * 2);
    let mut labels = Vec::with_capacity(base_n);
    for i in 0..base_n {
        let class = i % 2;
        let phi = rng.random_range(0.0..std::f64::consts::PI);
        // two interleaving half circles, centered on the origin
        let (mut x, mut y) = if class == 0 {
            (phi.cos(), phi.sin())
        } else {
            (1.0 - phi.cos(), 0.5 - phi.sin())
        };
        x -= 0.5;
        y -= 0.25;
        if noise_sd > 0.0 {
            x += noise.sample(&mut rng);
            y += noise.sample(&mut rng);
        }
        base.push(x);
        base.push(y);
        labels.push(class);
    }

    let mut domains = Vec::with_capacity(t_count + 1);
    for t in 0..=t_count {
        let angle = if t_count == 0 {
            0.0
        } else {
            (t as f64) * total_angle_deg / (t_count as f64)
        };
        let rad = angle.to_radians();
        let (sin, cos) = rad.sin_cos();
        let count = if t == 0 { n_source } else { n };
        let mut rotated = Vec::with_capacity(count * 2);
        for i in 0..count {
            let (x, y) = (base[2 * i], base[2 * i + 1]);
            rotated.push(x * cos - y * sin);
            rotated.push(x * sin + y * cos);
        }
        let features = Tensor::matrix(count, 2, rotated)?;
        let domain_labels = labels[..count].to_vec();
        let domain = if t == 0 {
            Domain::labeled(features, domain_labels, t)?
        } else {
            Domain::with_sealed_labels(features, domain_labels, t)?
        };
        domains.push(domain);
    }
    DomainSequence::new(domains, ShiftKind::Rotation, 2)
}

/// One-dimensional two-blob clouds translated by `t * shift / T` at domain t
/// (class means at -1 and +1 before the shift). Domains are drawn
/// independently, so empirical shifts carry sampling error.
pub fn gen_additive_shift(
    n_source: usize,
    n: usize,
    t_count: usize,
    shift_magnitude: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<DomainSequence> {
    check_sizes(n_source, n, t_count)?;
    if noise_sd <= 0.0 || !noise_sd.is_finite() || !shift_magnitude.is_finite() {
        return Err(Error::InvalidParam("bad blob parameters".into()));
    }
    let mut domains = Vec::with_capacity(t_count + 1);
    for t in 0..=t_count {
        let offset = if t_count == 0 {
            0.0
        } else {
            (t as f64) * shift_magnitude / (t_count as f64)
        };
        let mut rng = seeding::derived_rng(seed, &[TAG_DOMAIN_GEN, 1 + t as u64]);
        let noise = Normal::new(0.0, noise_sd).unwrap();
        let count = if t == 0 { n_source } else { n };
        let mut values = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % 2;
            let mean = if class == 0 { -1.0 } else { 1.0 };
            values.push(mean + noise.sample(&mut rng) + offset);
            labels.push(class);
        }
        let features = Tensor::matrix(count, 1, values)?;
        let domain = if t == 0 {
            Domain::labeled(features, labels, t)?
        } else {
            Domain::with_sealed_labels(features, labels, t)?
        };
        domains.push(domain);
    }
    DomainSequence::new(domains, ShiftKind::AdditiveShift, 2)
}

fn check_sizes(n_source: usize, n: usize, t_count: usize) -> Result<()> {
    if n_source < 2 || (t_count > 0 && n < 2) {
        return Err(Error::InvalidParam(
            "need at least two samples per domain".into(),
        ));
    }
    Ok(())
}
