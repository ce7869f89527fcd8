//! Behavioural measures computed per run and aggregated per experiment cell.
//!
//! Sequential statistics (win-stay, lose-shift) only use adjacent trial pairs
//! that stay in the same segment. Reversal-sensitive statistics are computed
//! per eligible segment (non-tie latent state) from recorded task metadata.
//! Undefined quantities are `None`, never zero, and are left out of cell
//! means.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::storage::RunRecord;
use crate::task_env::{Action, LatentState};

/// Default post-reversal regret window, in trials.
pub const REGRET_WINDOW: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentView {
    pub index: usize,
    pub state: LatentState,
    /// First trial (1-based `t`) of the segment.
    pub start: usize,
    /// Last trial of the segment.
    pub end: usize,
    /// Position of the first trial in `run.trials`.
    pub offset: usize,
    pub len: usize,
    pub eligible: bool,
    pub optimal: Option<Action>,
    /// Optimal action of the most recent preceding eligible segment.
    pub optimal_prev: Option<Action>,
}

impl SegmentView {
    /// Eligible, has a previous optimal action, and that action differs from
    /// the current one.
    pub fn is_true_reversal(&self) -> bool {
        self.eligible && self.optimal_prev.is_some() && self.optimal_prev != self.optimal
    }

    /// Eligible with a previous eligible segment recommending the same action.
    pub fn is_degenerate(&self) -> bool {
        self.eligible && self.optimal_prev.is_some() && self.optimal_prev == self.optimal
    }
}

/// Reconstructs segments from the recorded segment indices and states.
pub fn segment_views(run: &RunRecord) -> Result<Vec<SegmentView>> {
    if run.trials.is_empty() {
        return Err(Error::InconsistentRun(format!("run {} has no trials", run.run_id)));
    }
    let mut out: Vec<SegmentView> = Vec::new();
    let mut last_eligible: Option<Action> = None;
    for (pos, tr) in run.trials.iter().enumerate() {
        let (Some(state), Some(seg)) = (tr.state, tr.segment) else {
            return Err(Error::InconsistentRun(format!(
                "run {} lacks latent metadata at trial {}",
                run.run_id, tr.t
            )));
        };
        match out.last_mut() {
            Some(cur) if cur.index == seg => {
                if cur.state != state {
                    return Err(Error::InconsistentRun(format!(
                        "run {}: state changes inside segment {seg}",
                        run.run_id
                    )));
                }
                cur.end = tr.t;
                cur.len += 1;
            }
            prev => {
                let expected = prev.as_ref().map_or(seg, |p| p.index + 1);
                if seg != expected {
                    return Err(Error::InconsistentRun(format!(
                        "run {}: segment ids not consecutive ({} after {:?})",
                        run.run_id,
                        seg,
                        prev.map(|p| p.index)
                    )));
                }
                if let Some(p) = out.last() {
                    if p.eligible {
                        last_eligible = p.optimal;
                    }
                }
                out.push(SegmentView {
                    index: seg,
                    state,
                    start: tr.t,
                    end: tr.t,
                    offset: pos,
                    len: 1,
                    eligible: !state.is_tie(),
                    optimal: state.optimal_action(),
                    optimal_prev: if state.is_tie() { None } else { last_eligible },
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WslsCounts {
    pub wins: usize,
    pub stays_after_win: usize,
    pub losses: usize,
    pub shifts_after_loss: usize,
}

impl WslsCounts {
    pub fn win_stay(&self) -> Option<f64> {
        ratio(self.stays_after_win, self.wins)
    }

    pub fn lose_shift(&self) -> Option<f64> {
        ratio(self.shifts_after_loss, self.losses)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Counts over same-segment adjacent pairs. Runs without latent metadata are
/// treated as a single segment.
pub fn wsls_counts(run: &RunRecord) -> WslsCounts {
    let mut c = WslsCounts::default();
    for pair in run.trials.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        if prev.segment != cur.segment {
            continue;
        }
        let same = cur.action == prev.action;
        if prev.won() {
            c.wins += 1;
            c.stays_after_win += same as usize;
        } else {
            c.losses += 1;
            c.shifts_after_loss += !same as usize;
        }
    }
    c
}

/// `(win_stay, lose_shift)`.
pub fn win_stay_lose_shift(run: &RunRecord) -> (Option<f64>, Option<f64>) {
    let c = wsls_counts(run);
    (c.win_stay(), c.lose_shift())
}

/// Per-segment values of a reversal-sensitive measure plus their run mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentMeasure<T> {
    /// `(segment index, value)`.
    pub per_segment: Vec<(usize, T)>,
    pub mean: Option<f64>,
    /// Eligible segments skipped because the previous optimal action equals the current one.
    pub n_degenerate: usize,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Consecutive post-switch trials that keep choosing the previous optimal
/// action, capped at the segment end.
pub fn perseveration(run: &RunRecord, segments: &[SegmentView]) -> SegmentMeasure<usize> {
    let mut per_segment = Vec::new();
    let mut n_degenerate = 0;
    for seg in segments {
        if seg.is_degenerate() {
            n_degenerate += 1;
            continue;
        }
        if !seg.is_true_reversal() {
            continue;
        }
        let prev = seg.optimal_prev.unwrap();
        let len = run.trials[seg.offset..seg.offset + seg.len]
            .iter()
            .take_while(|t| t.action == prev)
            .count();
        per_segment.push((seg.index, len));
    }
    let mean = mean_of(per_segment.iter().map(|&(_, v)| v as f64));
    SegmentMeasure {
        per_segment,
        mean,
        n_degenerate,
    }
}

/// Expected-coin regret summed over the first `window` trials of each eligible
/// post-switch segment.
pub fn post_reversal_regret(
    run: &RunRecord,
    segments: &[SegmentView],
    window: usize,
    coin_scale: f64,
) -> SegmentMeasure<f64> {
    let mut per_segment = Vec::new();
    for seg in segments.iter().filter(|s| s.eligible && s.optimal_prev.is_some()) {
        let n = seg.len.min(window);
        let pct: u32 = run.trials[seg.offset..seg.offset + n]
            .iter()
            .map(|t| seg.state.regret_pct(t.action))
            .sum();
        per_segment.push((seg.index, pct as f64 * coin_scale / 100.0));
    }
    let mean = mean_of(per_segment.iter().map(|&(_, v)| v));
    SegmentMeasure {
        per_segment,
        mean,
        n_degenerate: 0,
    }
}

/// 1-based position (relative to the segment start) of the first choice of
/// the new optimal action; `None` when it is never chosen in the segment.
pub fn switch_latency(run: &RunRecord, segments: &[SegmentView]) -> SegmentMeasure<Option<usize>> {
    let mut per_segment = Vec::new();
    let mut n_degenerate = 0;
    for seg in segments {
        if seg.is_degenerate() {
            n_degenerate += 1;
            continue;
        }
        if !seg.is_true_reversal() {
            continue;
        }
        let target = seg.optimal.unwrap();
        let latency = run.trials[seg.offset..seg.offset + seg.len]
            .iter()
            .position(|t| t.action == target)
            .map(|p| p + 1);
        per_segment.push((seg.index, latency));
    }
    let mean = mean_of(per_segment.iter().filter_map(|&(_, v)| v.map(|x| x as f64)));
    SegmentMeasure {
        per_segment,
        mean,
        n_degenerate,
    }
}

/// Wins over the recorded (completed) trials.
pub fn total_wins(run: &RunRecord) -> usize {
    run.total_wins()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub win_stay: Option<f64>,
    pub lose_shift: Option<f64>,
    pub mean_perseveration: Option<f64>,
    pub mean_post_reversal_regret: Option<f64>,
    pub mean_switch_latency: Option<f64>,
    pub total_wins: usize,
    pub n_trials: usize,
    pub n_eligible_segments: usize,
    pub n_degenerate_segments: usize,
}

/// All run-level measures. Runs without latent metadata get missing
/// state-dependent measures.
pub fn run_metrics(run: &RunRecord) -> Result<RunMetrics> {
    let (win_stay, lose_shift) = win_stay_lose_shift(run);
    let mut m = RunMetrics {
        run_id: run.run_id.clone(),
        win_stay,
        lose_shift,
        mean_perseveration: None,
        mean_post_reversal_regret: None,
        mean_switch_latency: None,
        total_wins: total_wins(run),
        n_trials: run.trials.len(),
        n_eligible_segments: 0,
        n_degenerate_segments: 0,
    };
    if !run.has_task_metadata() {
        return Ok(m);
    }
    let segments = segment_views(run)?;
    let coin_scale = run.trials.first().map_or(100.0, |t| t.coins.abs() as f64);
    let pers = perseveration(run, &segments);
    m.mean_perseveration = pers.mean;
    m.mean_post_reversal_regret = post_reversal_regret(run, &segments, REGRET_WINDOW, coin_scale).mean;
    m.mean_switch_latency = switch_latency(run, &segments).mean;
    m.n_eligible_segments = segments.iter().filter(|s| s.eligible).count();
    m.n_degenerate_segments = pers.n_degenerate;
    Ok(m)
}

pub fn run_metrics_all(runs: &[RunRecord], exec: Exec) -> Result<Vec<RunMetrics>> {
    exec.map_slice(runs, run_metrics).into_iter().collect()
}

/// Probability of choosing the new segment's optimal action around eligible reversals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedCurve {
    /// `-k..=-1` then `1..=k`; offset `+1` is the first post-switch trial.
    pub offsets: Vec<i64>,
    pub mean: Vec<Option<f64>>,
    pub n: Vec<usize>,
}

/// Event-aligned choice curve. Pre-switch offsets stay inside the immediately
/// preceding segment, post-switch offsets inside the new one.
pub fn aligned_curve(runs: &[RunRecord], k: usize) -> Result<AlignedCurve> {
    let offsets: Vec<i64> = (-(k as i64)..=-1).chain(1..=k as i64).collect();
    let mut hits = vec![0usize; offsets.len()];
    let mut n = vec![0usize; offsets.len()];
    for run in runs.iter().filter(|r| r.has_task_metadata()) {
        let segments = segment_views(run)?;
        for w in segments.windows(2) {
            let (before, seg) = (&w[0], &w[1]);
            if !seg.eligible {
                continue;
            }
            let target = seg.optimal.unwrap();
            for (slot, &o) in offsets.iter().enumerate() {
                let pos = if o < 0 {
                    let back = (-o) as usize;
                    if back > before.len {
                        continue;
                    }
                    seg.offset - back
                } else {
                    let fwd = o as usize;
                    if fwd > seg.len {
                        continue;
                    }
                    seg.offset + fwd - 1
                };
                n[slot] += 1;
                hits[slot] += (run.trials[pos].action == target) as usize;
            }
        }
    }
    let mean = hits.iter().zip(&n).map(|(&h, &c)| ratio(h, c)).collect();
    Ok(AlignedCurve { offsets, mean, n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
    pub missing: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n_runs: usize,
    pub metrics: Vec<MetricSummary>,
}

impl CellSummary {
    pub fn get(&self, metric: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

fn summarize(metric: &str, values: impl Iterator<Item = Option<f64>>) -> MetricSummary {
    let mut xs = Vec::new();
    let mut missing = 0;
    for v in values {
        match v {
            Some(x) => xs.push(x),
            None => missing += 1,
        }
    }
    let n = xs.len();
    let mean = mean_of(xs.iter().copied());
    let sd = mean.filter(|_| n > 1).map(|m| {
        let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    MetricSummary {
        metric: metric.into(),
        mean,
        sd,
        n,
        missing,
    }
}

/// Cell-level means and SDs (n-1 denominator) over non-missing run values.
pub fn aggregate(cell: &[RunMetrics]) -> Result<CellSummary> {
    if cell.is_empty() {
        return Err(Error::InvalidConfig("cannot aggregate an empty cell".into()));
    }
    let metrics = vec![
        summarize("win_stay", cell.iter().map(|m| m.win_stay)),
        summarize("lose_shift", cell.iter().map(|m| m.lose_shift)),
        summarize("perseveration", cell.iter().map(|m| m.mean_perseveration)),
        summarize("post_reversal_regret", cell.iter().map(|m| m.mean_post_reversal_regret)),
        summarize("switch_latency", cell.iter().map(|m| m.mean_switch_latency)),
        summarize("total_wins", cell.iter().map(|m| Some(m.total_wins as f64))),
    ];
    Ok(CellSummary {
        n_runs: cell.len(),
        metrics,
    })
}

/// Per-run CSV, columns in [`RunMetrics`] field order; missing values are empty.
pub fn write_run_metrics_csv<W: Write>(out: W, rows: &[RunMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `offset,mean,n`.
pub fn write_curve_csv<W: Write>(out: W, curve: &AlignedCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["offset", "mean", "n"])?;
    for ((o, m), n) in curve.offsets.iter().zip(&curve.mean).zip(&curve.n) {
        w.write_record([o.to_string(), m.map(|v| v.to_string()).unwrap_or_default(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `metric,mean,sd,n,missing`.
pub fn write_summary_csv<W: Write>(out: W, summary: &CellSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in &summary.metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}
