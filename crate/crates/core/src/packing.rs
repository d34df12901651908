//! Separated families of shallow ReLU networks built from constant-weight codes.
//!
//! A codebook of weight-`m` binary words of length `S = d` with pairwise
//! Hamming distance at least `⌈m/5⌉` induces the family
//! `f_w(x) = (τV_F/m)·Σ_k w_k·ReLU(x_k)`. For two members at Hamming distance
//! `H` the squared `L2(N(0, I_d))` distance is exactly
//! `(τV_F/m)²·H·(π−1)/(2π)`: the diagonal terms contribute `H/2` and, because
//! equal-weight words have as many `+1` as `−1` differences, the cross terms
//! sum to `−H/(2π)`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, NetworkParams};
use crate::rng::stream_rng;

/// Largest candidate space that is enumerated in full.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Largest codebook that will be materialized.
pub const MAX_CODEBOOK_SIZE: u128 = 5_000_000;

/// Binary word stored as packed bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Codeword {
    len: usize,
    blocks: Vec<u64>,
}

impl Codeword {
    pub fn zeros(len: usize) -> Self {
        Codeword {
            len,
            blocks: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_support(len: usize, support: &[usize]) -> Result<Self> {
        let mut w = Codeword::zeros(len);
        for &k in support {
            if k >= len {
                return Err(Error::shape(format!("position {k} outside a word of length {len}")));
            }
            w.blocks[k / 64] |= 1 << (k % 64);
        }
        Ok(w)
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut w = Codeword::zeros(bits.len());
        for (k, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => w.blocks[k / 64] |= 1 << (k % 64),
                other => return Err(Error::precondition(format!("bit value {other} is not 0/1"))),
            }
        }
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, k: usize) -> bool {
        self.blocks[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn weight(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.len).filter(|&k| self.bit(k)).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len).map(|k| if self.bit(k) { 1.0 } else { 0.0 }).collect()
    }

    fn distance_unchecked(&self, other: &Codeword) -> usize {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

impl std::fmt::Display for Codeword {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for k in 0..self.len {
            f.write_char(if self.bit(k) { '1' } else { '0' })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Codeword {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .bytes()
            .map(|c| match c {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(Error::precondition(format!("'{}' is not a 0/1 character", c as char))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Codeword::from_bits(&bits)
    }
}

impl Serialize for Codeword {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Codeword {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn hamming_distance(u: &Codeword, v: &Codeword) -> Result<usize> {
    if u.len != v.len {
        return Err(Error::shape(format!("words of length {} and {}", u.len, v.len)));
    }
    Ok(u.distance_unchecked(v))
}

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc·(n−i) is divisible by (i+1) after the multiplication.
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// `⌈√x⌉` for integers.
pub fn ceil_sqrt(x: u128) -> u128 {
    if x == 0 {
        return 0;
    }
    let mut r = (x as f64).sqrt() as u128;
    while r * r > x {
        r -= 1;
    }
    while r * r < x {
        r += 1;
    }
    r
}

/// Constant-weight code with a guaranteed minimum distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub dim: usize,
    pub weight: usize,
    pub min_dist: usize,
    pub target_card: usize,
    pub codewords: Vec<Codeword>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookOptions {
    pub seed: u64,
    /// Randomized sweeps tried after the lexicographic one falls short.
    pub max_attempts: usize,
}

impl Default for CodebookOptions {
    fn default() -> Self {
        CodebookOptions {
            seed: 0,
            max_attempts: 16,
        }
    }
}

/// Exhaustive check of every codebook invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodebookCertificate {
    pub cardinality: usize,
    pub all_weight_m: bool,
    /// Smallest pairwise distance, `None` for fewer than two words.
    pub observed_min_dist: Option<usize>,
    pub distance_ok: bool,
    pub cardinality_ok: bool,
    pub log_cardinality: f64,
    /// `(m/4)·log S`.
    pub log_cardinality_floor: f64,
    pub log_cardinality_ok: bool,
}

impl CodebookCertificate {
    pub fn passed(&self) -> bool {
        self.all_weight_m && self.distance_ok && self.cardinality_ok && self.log_cardinality_ok
    }
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn certify(&self) -> CodebookCertificate {
        let all_weight_m = self
            .codewords
            .iter()
            .all(|w| w.len() == self.dim && w.weight() == self.weight);
        let mut observed: Option<usize> = None;
        for (i, a) in self.codewords.iter().enumerate() {
            for b in &self.codewords[i + 1..] {
                let h = a.distance_unchecked(b);
                observed = Some(observed.map_or(h, |o| o.min(h)));
            }
        }
        let log_cardinality = (self.len() as f64).ln();
        let log_cardinality_floor = self.weight as f64 / 4.0 * (self.dim as f64).ln();
        CodebookCertificate {
            cardinality: self.len(),
            all_weight_m,
            observed_min_dist: observed,
            distance_ok: observed.is_none_or(|o| o >= self.min_dist),
            cardinality_ok: self.len() >= self.target_card,
            log_cardinality,
            log_cardinality_floor,
            log_cardinality_ok: log_cardinality >= log_cardinality_floor,
        }
    }

    /// Text export: a `# S=.. m=.. min_dist=..` header then one word per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# S={} m={} min_dist={}\n", self.dim, self.weight, self.min_dist);
        for w in &self.codewords {
            let _ = writeln!(out, "{w}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let parse_field = |key: &str| -> Result<usize> {
            header
                .split_whitespace()
                .find_map(|tok| tok.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("header lacks {key}<int>"),
                })
        };
        if !header.starts_with('#') {
            return Err(Error::Parse {
                line: 1,
                message: "header must start with '#'".into(),
            });
        }
        let dim = parse_field("S=")?;
        let weight = parse_field("m=")?;
        let min_dist = parse_field("min_dist=")?;
        let mut codewords = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let w: Codeword = line.parse().map_err(|e: Error| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if w.len() != dim {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("word of length {} in a length-{dim} codebook", w.len()),
                });
            }
            codewords.push(w);
        }
        Ok(Codebook {
            dim,
            weight,
            min_dist,
            target_card: target_cardinality(dim, weight)?,
            codewords,
        })
    }
}

/// `⌈√C(S, m)⌉`.
pub fn target_cardinality(dim: usize, weight: usize) -> Result<usize> {
    let total = binomial(dim as u64, weight as u64)
        .ok_or_else(|| Error::precondition(format!("C({dim}, {weight}) overflows")))?;
    let target = ceil_sqrt(total);
    if target > MAX_CODEBOOK_SIZE {
        return Err(Error::precondition(format!(
            "a codebook of {target} words for S = {dim}, m = {weight} is too large to materialize"
        )));
    }
    Ok(target as usize)
}

/// Required distance `⌈m/5⌉`.
pub fn required_distance(weight: usize) -> usize {
    weight.div_ceil(5)
}

pub fn build_codebook(dim: usize, weight: usize) -> Result<Codebook> {
    build_codebook_with(dim, weight, &CodebookOptions::default())
}

/// Greedy Gilbert–Varshamov construction.
///
/// Sweeps all weight-`m` words in lexicographic order of their supports,
/// keeping a word iff it is at distance `≥ ⌈m/5⌉` from every kept word. If that falls
/// short of `⌈√C(S, m)⌉`, the sweep is repeated over seeded random
/// permutations. Candidate spaces above [`ENUMERATION_LIMIT`] are sampled
/// instead of enumerated, and sampling stops once the target is reached.
pub fn build_codebook_with(dim: usize, weight: usize, opts: &CodebookOptions) -> Result<Codebook> {
    if dim < 10 {
        return Err(Error::precondition(format!("S = {dim} is below 10")));
    }
    if weight < 1 || weight > dim / 10 {
        return Err(Error::precondition(format!(
            "weight m = {weight} must lie in [1, {}] for S = {dim}",
            dim / 10
        )));
    }
    let min_dist = required_distance(weight);
    let target = target_cardinality(dim, weight)?;
    let total = binomial(dim as u64, weight as u64).expect("checked by target_cardinality");

    let mut best: Vec<Codeword> = Vec::new();
    let mut attempts = 0;
    if total <= ENUMERATION_LIMIT {
        let candidates = all_supports(dim, weight);
        for attempt in 0..=opts.max_attempts {
            attempts = attempt + 1;
            let kept = if attempt == 0 {
                greedy(dim, min_dist, candidates.iter())
            } else {
                let mut order: Vec<&Vec<usize>> = candidates.iter().collect();
                order.shuffle(&mut stream_rng(opts.seed, attempt as u64));
                greedy(dim, min_dist, order.into_iter())
            };
            if kept.len() > best.len() {
                best = kept;
            }
            if best.len() >= target {
                break;
            }
        }
    } else {
        for attempt in 0..=opts.max_attempts {
            attempts = attempt + 1;
            let kept = sampled_greedy(dim, weight, min_dist, target, opts.seed, attempt as u64);
            if kept.len() > best.len() {
                best = kept;
            }
            if best.len() >= target {
                break;
            }
        }
    }
    if best.len() < target {
        return Err(Error::Construction {
            best: best.len(),
            target,
            attempts,
        });
    }
    Ok(Codebook {
        dim,
        weight,
        min_dist,
        target_card: target,
        codewords: best,
    })
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn all_supports(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn accepts(kept: &[Codeword], w: &Codeword, min_dist: usize) -> bool {
    // Distinct equal-weight words are always at distance >= 2.
    if min_dist <= 2 {
        return true;
    }
    kept.iter().all(|k| k.distance_unchecked(w) >= min_dist)
}

fn greedy<'a>(dim: usize, min_dist: usize, candidates: impl Iterator<Item = &'a Vec<usize>>) -> Vec<Codeword> {
    let mut kept: Vec<Codeword> = Vec::new();
    for support in candidates {
        let w = Codeword::from_support(dim, support).expect("support within range");
        if accepts(&kept, &w, min_dist) {
            kept.push(w);
        }
    }
    kept
}

fn sampled_greedy(dim: usize, weight: usize, min_dist: usize, target: usize, seed: u64, stream: u64) -> Vec<Codeword> {
    let mut rng = stream_rng(seed, stream);
    let mut seen: HashSet<Codeword> = HashSet::new();
    let mut kept = Vec::new();
    let max_draws = target.saturating_mul(20).max(1000);
    for _ in 0..max_draws {
        if kept.len() >= target {
            break;
        }
        let mut support = index::sample(&mut rng, dim, weight).into_vec();
        support.sort_unstable();
        let w = Codeword::from_support(dim, &support).expect("support within range");
        if !seen.insert(w.clone()) {
            continue;
        }
        if accepts(&kept, &w, min_dist) {
            kept.push(w);
        }
    }
    kept
}

/// The shallow packing family over standard-basis directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingEnsemble {
    pub input_dim: usize,
    pub codebook: Codebook,
    /// Outer coefficient `τ·V_F/m` on every active unit.
    pub scale_t: f64,
    pub tau: f64,
    pub vf: f64,
}

/// JSON export layout for an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDoc {
    pub d: usize,
    pub m: usize,
    pub tau: f64,
    pub vf: f64,
    pub scale_t: f64,
    pub codewords: Vec<Codeword>,
}

pub fn build_f0_ensemble(d: usize, m: usize, tau: f64, vf: f64) -> Result<PackingEnsemble> {
    build_f0_ensemble_with(d, m, tau, vf, &CodebookOptions::default())
}

pub fn build_f0_ensemble_with(d: usize, m: usize, tau: f64, vf: f64, opts: &CodebookOptions) -> Result<PackingEnsemble> {
    if !(tau > 0.0 && vf > 0.0) {
        return Err(Error::precondition("tau and vf must be positive"));
    }
    let codebook = build_codebook_with(d, m, opts)?;
    Ok(PackingEnsemble {
        input_dim: d,
        codebook,
        scale_t: tau * vf / m as f64,
        tau,
        vf,
    })
}

impl PackingEnsemble {
    pub fn len(&self) -> usize {
        self.codebook.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codebook.is_empty()
    }

    pub fn weight(&self) -> usize {
        self.codebook.weight
    }

    /// Direction of the `k`-th hidden unit, the standard basis vector `e_k`.
    pub fn direction(&self, k: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.input_dim];
        e[k] = 1.0;
        e
    }

    pub fn member(&self, i: usize) -> &Codeword {
        &self.codebook.codewords[i]
    }

    /// `f_w(x) = scale_t · Σ_k w_k ReLU(x_k)`.
    pub fn eval(&self, w: &Codeword, x: &[f64]) -> f64 {
        let s: f64 = w.support().iter().map(|&k| x[k].max(0.0)).sum();
        self.scale_t * s
    }

    /// Member `i` as a one-hidden-layer network with `W^0 = I_d`.
    pub fn to_network(&self, i: usize) -> NetworkParams {
        let outer = Matrix::from_vec(1, self.input_dim, self.member(i).to_f64())
            .expect("codeword length equals d")
            .scale(self.scale_t);
        NetworkParams::new(vec![Matrix::identity(self.input_dim), outer]).expect("consistent shapes")
    }

    /// Floor `(τV_F)²/(25m)` every pair has to clear.
    pub fn separation_floor(&self) -> f64 {
        let tv = self.tau * self.vf;
        tv * tv / (25.0 * self.weight() as f64)
    }

    pub fn to_doc(&self) -> EnsembleDoc {
        EnsembleDoc {
            d: self.input_dim,
            m: self.weight(),
            tau: self.tau,
            vf: self.vf,
            scale_t: self.scale_t,
            codewords: self.codebook.codewords.clone(),
        }
    }

    /// Closed-form separation for every pair.
    pub fn certificate(&self) -> Vec<SeparationRow> {
        let floor = self.separation_floor();
        let words = &self.codebook.codewords;
        let mut rows = Vec::with_capacity(words.len() * words.len().saturating_sub(1) / 2);
        for i in 0..words.len() {
            for j in i + 1..words.len() {
                let hamming = words[i].distance_unchecked(&words[j]);
                let separation = separation_for_distance(self.scale_t, hamming);
                rows.push(SeparationRow {
                    i,
                    j,
                    hamming,
                    separation,
                    floor,
                    pass: separation >= floor,
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparationRow {
    pub i: usize,
    pub j: usize,
    pub hamming: usize,
    pub separation: f64,
    pub floor: f64,
    pub pass: bool,
}

/// `scale_t² · H · (π−1)/(2π)`.
pub fn separation_for_distance(scale_t: f64, hamming: usize) -> f64 {
    scale_t * scale_t * hamming as f64 * (PI - 1.0) / (2.0 * PI)
}

/// Squared `L2(N(0, I_d))` distance between two ensemble members.
pub fn separation_closed_form(w: &Codeword, w_prime: &Codeword, ensemble: &PackingEnsemble) -> Result<f64> {
    let h = hamming_distance(w, w_prime)?;
    if w.len() != ensemble.input_dim {
        return Err(Error::shape("codeword length differs from the ensemble dimension"));
    }
    if w.weight() != w_prime.weight() || w.weight() != ensemble.weight() {
        return Err(Error::precondition(format!(
            "codewords of weight {} and {} in a weight-{} ensemble",
            w.weight(),
            w_prime.weight(),
            ensemble.weight()
        )));
    }
    Ok(separation_for_distance(ensemble.scale_t, h))
}

/// Codeword weight `round((τV_F/(10δ))²)`, at least one.
pub fn weight_for_radius(delta: f64, tau: f64, vf: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(Error::precondition("delta must be positive"));
    }
    let m = (tau * vf / (10.0 * delta)).powi(2);
    let rounded = (m + 0.5).floor();
    if !rounded.is_finite() || rounded > usize::MAX as f64 {
        return Err(Error::precondition(format!("weight {m} is not representable")));
    }
    Ok((rounded as usize).max(1))
}

/// Non-negative factorization `W^L···W^1 = c^L·w` of a scaled codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepFactorization {
    /// `W^1..W^L`; the first `L−1` are `S×S` diagonal, the last is `1×S`.
    pub matrices: Vec<Matrix>,
    pub layer_constant: f64,
    pub achieved_scale: f64,
}

impl DeepFactorization {
    /// Uses `c` on the support of `codeword` in every layer.
    pub fn with_layer_constant(codeword: &Codeword, depth: usize, c: f64) -> Result<Self> {
        if depth == 0 {
            return Err(Error::precondition("L must be >= 1"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::precondition("layer constant must be positive"));
        }
        let s = codeword.len();
        let support = codeword.support();
        let mut matrices = Vec::with_capacity(depth);
        for _ in 1..depth {
            let mut diag = Matrix::zeros(s, s);
            for &k in &support {
                diag.set(k, k, c);
            }
            matrices.push(diag);
        }
        let mut outer = Matrix::zeros(1, s);
        for &k in &support {
            outer.set(0, k, c);
        }
        matrices.push(outer);
        Ok(DeepFactorization {
            matrices,
            layer_constant: c,
            achieved_scale: c.powi(depth as i32),
        })
    }

    pub fn depth(&self) -> usize {
        self.matrices.len()
    }

    /// Row vector `W^L···W^1`.
    pub fn product(&self) -> Vec<f64> {
        let mut acc = self.matrices[self.matrices.len() - 1].clone();
        for m in self.matrices[..self.matrices.len() - 1].iter().rev() {
            acc = acc.matmul(m).expect("consistent shapes");
        }
        acc.as_slice().to_vec()
    }

    pub fn l1_budget_used(&self) -> f64 {
        self.matrices.iter().map(Matrix::l1_norm).sum()
    }

    /// Deep network `W^L φ(… φ(W^1 φ(I_d x)))`.
    pub fn to_network(&self) -> NetworkParams {
        let s = self.matrices[0].cols();
        let mut weights = vec![Matrix::identity(s)];
        weights.extend(self.matrices.iter().cloned());
        NetworkParams::new(weights).expect("consistent shapes")
    }
}

/// `c = min(v_s/(L·m), target^{1/L})`; requires `target ≤ (v_s/(L·m))^L = V_F/m^L`.
pub fn factorize_deep(codeword: &Codeword, depth: usize, vs: f64, target_scale: f64) -> Result<DeepFactorization> {
    let m = codeword.weight();
    if m == 0 {
        return Err(Error::precondition("codeword has weight zero"));
    }
    if depth == 0 {
        return Err(Error::precondition("L must be >= 1"));
    }
    if !(vs > 0.0 && target_scale > 0.0) {
        return Err(Error::precondition("vs and target scale must be positive"));
    }
    const TOL: f64 = 1e-12;
    let budget_c = vs / (depth * m) as f64;
    let max_scale = budget_c.powi(depth as i32);
    if target_scale > max_scale * (1.0 + TOL) {
        return Err(Error::Infeasible {
            requested: target_scale,
            max_achievable: max_scale,
        });
    }
    let c = budget_c.min(nth_root(target_scale, depth as i32));
    let fact = DeepFactorization::with_layer_constant(codeword, depth, c)?;
    debug_assert!(fact.achieved_scale >= target_scale * (1.0 - TOL));
    debug_assert!(fact.l1_budget_used() <= vs * (1.0 + TOL));
    Ok(fact)
}

/// `x^{1/n}`, choosing among neighbouring floats the one whose `n`-th power is closest to `x`.
fn nth_root(x: f64, n: i32) -> f64 {
    let r = x.powf(1.0 / f64::from(n));
    [r.next_down(), r, r.next_up()]
        .into_iter()
        .min_by(|a, b| {
            let ea = (a.powi(n) - x).abs();
            let eb = (b.powi(n) - x).abs();
            ea.total_cmp(&eb)
        })
        .expect("non-empty")
}
