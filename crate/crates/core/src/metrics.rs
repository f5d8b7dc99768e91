//! Per-step training metrics, their CSV form, and cross-run summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "env_step,episode_reward,best_reward,avg_batch_reward,q_loss,policy_kl,kl_to_ref";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub env_step: u64,
    /// Reward returned by this step.
    pub episode_reward: f64,
    /// Running maximum of `episode_reward`.
    pub best_reward: f64,
    /// Mean reward of the most recent `batch_size` steps.
    pub avg_batch_reward: f64,
    /// Q regression loss of the latest update (value loss for PPO); NaN
    /// before the first update.
    pub q_loss: f64,
    /// Policy objective of the latest update (surrogate loss for PPO); NaN
    /// before the first update.
    pub policy_kl: f64,
    /// `KL(pi || pibar)` summed over the contexts of the sampled action.
    pub kl_to_ref: f64,
}

impl MetricsRow {
    fn fields(&self) -> [f64; 6] {
        [
            self.episode_reward,
            self.best_reward,
            self.avg_batch_reward,
            self.q_loss,
            self.policy_kl,
            self.kl_to_ref,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row. Panics if `env_step` does not increase.
    pub fn push(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last() {
            assert!(row.env_step > last.env_step, "env_step must increase");
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn final_best_reward(&self) -> Option<f64> {
        self.rows.last().map(|r| r.best_reward)
    }

    /// Mean per-step reward over the last `n` rows.
    pub fn tail_mean_reward(&self, n: usize) -> Option<f64> {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        (!tail.is_empty())
            .then(|| tail.iter().map(|r| r.episode_reward).sum::<f64>() / tail.len() as f64)
    }

    /// CSV text; reals carry 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            write!(out, "{}", row.env_step).expect("write to String");
            for v in row.fields() {
                write!(out, ",{v:.8e}").expect("write to String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(parse_err(1, "missing or wrong header".into())),
        }
        let mut log = MetricsLog::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(parse_err(
                    lineno,
                    format!("expected 7 columns, got {}", cols.len()),
                ));
            }
            let env_step = cols[0]
                .trim()
                .parse()
                .map_err(|e| parse_err(lineno, format!("env_step: {e}")))?;
            let mut v = [0.0; 6];
            for (k, c) in cols[1..].iter().enumerate() {
                v[k] = c
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(lineno, format!("column {}: {e}", k + 2)))?;
            }
            if log
                .rows
                .last()
                .is_some_and(|r: &MetricsRow| r.env_step >= env_step)
            {
                return Err(parse_err(lineno, "env_step not increasing".into()));
            }
            log.rows.push(MetricsRow {
                env_step,
                episode_reward: v[0],
                best_reward: v[1],
                avg_batch_reward: v[2],
                q_loss: v[3],
                policy_kl: v[4],
                kl_to_ref: v[5],
            });
        }
        Ok(log)
    }
}

pub fn write_metrics(log: &MetricsLog, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, log.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<MetricsLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MetricsLog::from_csv(&text, path)
}

/// Mean and spread of the final best reward for one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: String,
    pub n_runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 when there is a single run.
    pub std: f64,
    pub single_run: bool,
}

/// Groups runs by algorithm name and summarizes their final best reward.
/// Rows come out sorted by name. Empty runs are skipped.
pub fn aggregate<'a>(runs: impl IntoIterator<Item = (&'a str, &'a MetricsLog)>) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (algo, log) in runs {
        if let Some(v) = log.final_best_reward() {
            groups.entry(algo).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|(algo, vals)| {
            let (mean, std) = mean_std(&vals);
            SummaryRow {
                algo: algo.to_string(),
                n_runs: vals.len(),
                mean,
                std,
                single_run: vals.len() == 1,
            }
        })
        .collect()
}

/// Mean and sample standard deviation (`n - 1`); std is 0 for `n = 1`.
pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Plain-text table of summary rows.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::from("algo        runs  final_best_reward\n");
    for r in rows {
        let flag = if r.single_run { "  (single run)" } else { "" };
        writeln!(
            out,
            "{:<11} {:>4}  {:.4} ± {:.4}{flag}",
            r.algo, r.n_runs, r.mean, r.std
        )
        .expect("write to String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_with(rewards: &[f64]) -> MetricsLog {
        let mut log = MetricsLog::new();
        let mut best = f64::NEG_INFINITY;
        for (i, &r) in rewards.iter().enumerate() {
            best = best.max(r);
            log.push(MetricsRow {
                env_step: i as u64 + 1,
                episode_reward: r,
                best_reward: best,
                avg_batch_reward: r,
                q_loss: f64::NAN,
                policy_kl: 0.25,
                kl_to_ref: 0.0,
            });
        }
        log
    }

    #[test]
    fn empty_log_is_header_only() {
        assert_eq!(MetricsLog::new().to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_round_trip_and_io() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/run.csv");
        let log = log_with(
            &(0..100)
                .map(|i| (i as f64 * 0.37).sin())
                .collect::<Vec<_>>(),
        );
        write_metrics(&log, &path).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in log.rows().iter().zip(back.rows()) {
            assert_eq!(a.env_step, b.env_step);
            assert!(
                (a.episode_reward - b.episode_reward).abs()
                    <= 1e-8 * a.episode_reward.abs().max(1e-300)
            );
            assert!(b.q_loss.is_nan());
        }
        match read_metrics(&dir.path().join("missing.csv")) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("missing.csv")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_csv() {
        let p = Path::new("x.csv");
        assert!(MetricsLog::from_csv("a,b\n", p).is_err());
        let bad = format!("{CSV_HEADER}\n1,2,3\n");
        assert!(matches!(
            MetricsLog::from_csv(&bad, p),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn aggregate_examples() {
        let same = [log_with(&[0.9]), log_with(&[0.1, 0.9])];
        let rows = aggregate(same.iter().map(|l| ("etpo", l)));
        assert_eq!(rows[0].mean, 0.9);
        assert_eq!(rows[0].std, 0.0);

        let a = log_with(&[0.8]);
        let b = log_with(&[1.0]);
        let c = log_with(&[0.3]);
        let rows = aggregate([("ppo_kl", &a), ("etpo", &c), ("ppo_kl", &b)]);
        assert_eq!(rows[0].algo, "etpo");
        assert!(rows[0].single_run && rows[0].std == 0.0 && rows[0].mean == 0.3);
        assert!((rows[1].mean - 0.9).abs() < 1e-12);
        assert!((rows[1].std - 0.141421).abs() < 1e-6);
        assert!(format_summary(&rows).contains("(single run)"));
    }

    proptest! {
        #[test]
        fn csv_round_trip_keeps_nine_digits(vals in prop::collection::vec(-1e6f64..1e6, 0..40)) {
            let log = log_with(&vals);
            let back = MetricsLog::from_csv(&log.to_csv(), Path::new("p")).unwrap();
            prop_assert_eq!(back.len(), log.len());
            for (a, b) in log.rows().iter().zip(back.rows()) {
                prop_assert!((a.episode_reward - b.episode_reward).abs() <= 5e-9 * a.episode_reward.abs());
                prop_assert!((a.best_reward - b.best_reward).abs() <= 5e-9 * a.best_reward.abs());
            }
            let best: Vec<f64> = back.rows().iter().map(|r| r.best_reward).collect();
            prop_assert!(best.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
