//! Per-model z-score standardization, `s' = (s - mu) / sigma`, with mean and
//! standard deviation estimated on a seeded random subsample of the model's
//! raw scores.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::table::ScoreTable;
use crate::textio::{fmt_sig, parse_f64, parse_u64, read_text, write_atomic, Header};

pub const DEFAULT_SAMPLE_SIZE: usize = 100_000;
pub const STATS_DIGITS: usize = 12;
const MIN_SIGMA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStats {
    pub model: String,
    pub mu: f64,
    pub sigma: f64,
    pub sample_size: usize,
    pub seed: u64,
}

/// Estimates mean and sample standard deviation (n−1 divisor) over
/// `min(sample_size, |entries|)` scores drawn without replacement.
pub fn calibrate(table: &ScoreTable, sample_size: usize, seed: u64) -> Result<CalibrationStats> {
    if sample_size < 2 {
        return Err(Error::InsufficientData(format!("sample size {sample_size} < 2")));
    }
    if table.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "table {:?} has {} entries",
            table.model,
            table.len()
        )));
    }

    let scores: Vec<f64> = table.scores().collect();
    let n = sample_size.min(scores.len());
    let sample: Vec<f64> = if n == scores.len() {
        scores
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, scores.len(), n).into_vec();
        // Summation order follows table order, not draw order.
        picked.sort_unstable();
        picked.into_iter().map(|i| scores[i]).collect()
    };

    let (mu, sigma) = mean_and_sd(&sample);
    if sigma.is_nan() || sigma < MIN_SIGMA {
        return Err(Error::DegenerateDistribution {
            model: table.model.clone(),
            sigma,
        });
    }
    Ok(CalibrationStats {
        model: table.model.clone(),
        mu,
        sigma,
        sample_size: n,
        seed,
    })
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mu) * (x - mu)).sum();
    (mu, (ss / (n - 1.0)).sqrt())
}

pub fn standardize(table: &ScoreTable, stats: &CalibrationStats) -> Result<ScoreTable> {
    check_model(table, stats)?;
    let (mu, sigma) = (stats.mu, stats.sigma);
    Ok(table.map_scores(table.model.clone(), |s| (s - mu) / sigma))
}

/// Inverse of [`standardize`].
pub fn destandardize(table: &ScoreTable, stats: &CalibrationStats) -> Result<ScoreTable> {
    check_model(table, stats)?;
    let (mu, sigma) = (stats.mu, stats.sigma);
    Ok(table.map_scores(table.model.clone(), |z| z * sigma + mu))
}

fn check_model(table: &ScoreTable, stats: &CalibrationStats) -> Result<()> {
    if table.model == stats.model {
        Ok(())
    } else {
        Err(Error::ModelMismatch {
            stats: stats.model.clone(),
            table: table.model.clone(),
        })
    }
}

impl CalibrationStats {
    /// `#model\tmu\tsigma\tsample_size\tseed` column header, one record line.
    pub fn render(&self, provenance: &[(String, String)]) -> String {
        let mut out = String::new();
        if !provenance.is_empty() {
            out.push_str(&Header(provenance.to_vec()).render());
            out.push('\n');
        }
        out.push_str("model\tmu\tsigma\tsample_size\tseed\n");
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            self.model,
            fmt_sig(self.mu, STATS_DIGITS),
            fmt_sig(self.sigma, STATS_DIGITS),
            self.sample_size,
            self.seed
        ));
        out
    }

    pub fn parse(text: &str) -> Result<(Self, Header)> {
        const WHAT: &str = "calibration stats";
        let mut header = Header::new();
        let mut lines = text.split_terminator('\n').enumerate().peekable();
        if let Some((_, l)) = lines.peek() {
            if l.starts_with('#') {
                header = Header::parse(l, WHAT, 1)?;
                lines.next();
            }
        }
        match lines.next() {
            Some((_, "model\tmu\tsigma\tsample_size\tseed")) => {}
            Some((i, _)) => return Err(Error::parse(WHAT, i + 1, "expected column header")),
            None => return Err(Error::parse(WHAT, 1, "empty file")),
        }
        let (i, record) = lines
            .next()
            .ok_or_else(|| Error::parse(WHAT, 2, "missing record line"))?;
        let line = i + 1;
        let f: Vec<&str> = record.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::parse(WHAT, line, "expected 5 fields"));
        }
        let stats = CalibrationStats {
            model: f[0].to_string(),
            mu: parse_f64(f[1], WHAT, line)?,
            sigma: parse_f64(f[2], WHAT, line)?,
            sample_size: parse_u64(f[3], WHAT, line)? as usize,
            seed: parse_u64(f[4], WHAT, line)?,
        };
        if stats.sigma.is_nan() || stats.sigma <= 0.0 || stats.sample_size < 2 {
            return Err(Error::parse(
                WHAT,
                line,
                "sigma must be positive and sample_size at least 2",
            ));
        }
        if lines.next().is_some() {
            return Err(Error::parse(WHAT, line + 1, "trailing content"));
        }
        Ok((stats, header))
    }
}

pub fn write_stats(stats: &CalibrationStats, provenance: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), stats.render(provenance).as_bytes())
}

pub fn read_stats(path: impl AsRef<Path>) -> Result<CalibrationStats> {
    read_stats_with_header(path).map(|(s, _)| s)
}

pub fn read_stats_with_header(path: impl AsRef<Path>) -> Result<(CalibrationStats, Header)> {
    CalibrationStats::parse(&read_text(path.as_ref())?)
}
