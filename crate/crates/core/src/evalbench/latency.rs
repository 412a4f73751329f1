//! Wall-clock comparison of sequential fan-out against one batched diffusion pass.

use std::fmt::Write as _;
use std::time::Instant;

use crate::diffusion::{sample_batch, Denoise};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::policy::{token_log_probs, PolicyParams};
use crate::store::{Query, SyntheticWorld};
use crate::synth::TargetMode;

/// Cost of one simulated generation call of the autoregressive fan-out model.
///
/// The delay is added to the measured time rather than slept, so a run with
/// large batches stays fast while reporting the same totals.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDelay {
    /// Seconds per call.
    pub per_call: f64,
    /// Seconds per generated token.
    pub per_token: f64,
    pub tokens_per_call: usize,
}

impl Default for SimulatedDelay {
    fn default() -> Self {
        Self {
            per_call: 0.010,
            per_token: 0.0,
            tokens_per_call: 0,
        }
    }
}

impl SimulatedDelay {
    pub fn call_seconds(&self) -> f64 {
        self.per_call + self.per_token * self.tokens_per_call as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub batch: usize,
    pub ar_seconds: f64,
    pub diff_seconds: f64,
}

impl LatencyRow {
    /// How many times faster the diffusion arm is.
    pub fn speedup(&self) -> f64 {
        self.ar_seconds / self.diff_seconds
    }
}

/// Times both arms at every batch size. Queries are taken from the world in
/// order, cycling when the batch is larger than the query list.
///
/// The autoregressive arm issues `k` sequential calls per query, each one a
/// simulated generation followed by a real policy draw and `knn` lookup.
/// The diffusion arm is one batched `sample_batch` followed by decoding the
/// first `k` rows of every tensor.
#[allow(clippy::too_many_arguments)]
pub fn latency_bench<D: Denoise + ?Sized>(
    batch_sizes: &[usize],
    delay: &SimulatedDelay,
    k: usize,
    n_per_subquery: usize,
    policy: &PolicyParams,
    world: &SyntheticWorld,
    denoiser: &D,
    rng: &mut Rng,
) -> Result<Vec<LatencyRow>> {
    if batch_sizes.is_empty() {
        return Err(Error::domain("latency bench needs at least one batch size"));
    }
    if batch_sizes.contains(&0) {
        return Err(Error::domain("batch sizes must be positive"));
    }
    if !(delay.per_call >= 0.0 && delay.per_token >= 0.0) {
        return Err(Error::domain("simulated delays must be non-negative"));
    }
    if k == 0 || k > denoiser.config().l {
        return Err(Error::domain(format!(
            "k must lie in 1..={}, got {k}",
            denoiser.config().l
        )));
    }
    if world.queries.is_empty() {
        return Err(Error::domain("world has no queries"));
    }
    let mut rows = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        let batch: Vec<&Query> = world.queries.iter().cycle().take(b).collect();

        let start = Instant::now();
        for q in &batch {
            for _ in 0..k {
                let probs: Vec<f64> = token_log_probs(policy, &q.embedding)?
                    .into_iter()
                    .map(f64::exp)
                    .collect();
                let token = rng.categorical(&probs);
                world.db.knn(&world.vocab[token], n_per_subquery)?;
            }
        }
        let ar_seconds = start.elapsed().as_secs_f64() + (b * k) as f64 * delay.call_seconds();

        let start = Instant::now();
        let conds: Vec<&[f64]> = batch.iter().map(|q| &q.embedding[..]).collect();
        let targets = sample_batch(denoiser, &conds, TargetMode::Oar, rng)?;
        for t in &targets {
            for i in 0..k {
                world.db.knn(t.row(i), n_per_subquery)?;
            }
        }
        let diff_seconds = start.elapsed().as_secs_f64();
        rows.push(LatencyRow {
            batch: b,
            ar_seconds,
            diff_seconds,
        });
    }
    Ok(rows)
}

pub fn latency_csv(rows: &[LatencyRow]) -> String {
    let mut out = String::from("batch,ar_seconds,diff_seconds,speedup\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.batch, r.ar_seconds, r.diff_seconds, r.speedup());
    }
    out
}

/// Log-log line plot of both arms against batch size.
pub fn latency_svg(rows: &[LatencyRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 150.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">Latency vs batch size (log-log)</text>"#,
        (L + W - R) / 2.0
    );
    if rows.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let times = rows.iter().flat_map(|r| [r.ar_seconds, r.diff_seconds]).filter(|t| *t > 0.0);
    let (mut lo, mut hi) = times.fold((f64::INFINITY, 0.0f64), |(a, b), t| (a.min(t), b.max(t)));
    if !lo.is_finite() {
        lo = 1e-3;
        hi = 1.0;
    }
    let (ylo, yhi) = (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0));
    let xs: Vec<f64> = rows.iter().map(|r| (r.batch as f64).log2()).collect();
    let (xlo, xhi) = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let span = if xhi > xlo { xhi - xlo } else { 1.0 };
    let px = |x: f64| L + (x - xlo) / span * (W - L - R);
    let py = |t: f64| H - B - (t.max(1e-12).log10() - ylo) / (yhi - ylo) * (H - T - B);

    let _ = writeln!(
        out,
        r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - B,
        W - R,
        H - B
    );
    let _ = writeln!(out, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for (r, &x) in rows.iter().zip(&xs) {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(x),
            H - B + 18.0,
            r.batch
        );
    }
    for e in ylo as i32..=yhi as i32 {
        let y = py(10f64.powi(e));
        let _ = writeln!(
            out,
            r##"<line x1="{L}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##,
            W - R
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"#,
            L - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">batch size</text>"#,
        (L + W - R) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">seconds</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );
    let series: [(&str, &str, fn(&LatencyRow) -> f64); 2] = [
        ("autoregressive", "#c0392b", |r| r.ar_seconds),
        ("diffusion", "#2471a3", |r| r.diff_seconds),
    ];
    for (i, (name, color, get)) in series.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .zip(&xs)
            .map(|(r, &x)| format!("{:.1},{:.1}", px(x), py(get(r))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        let ly = T + 20.0 + 20.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            W - R + 12.0,
            W - R + 32.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{name}</text>"#, W - R + 38.0, ly + 4.0);
    }
    out.push_str("</svg>\n");
    out
}
