//! Spatiotemporal input patterns as timestamped events on source tags.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

use crate::fabric::SourceTag;

/// Post-event duration of a single-spike pattern (s).
pub const SINGLE_DURATION: f64 = 0.1;
/// Time appended after the last event of pair and triplet patterns (s).
pub const RESPONSE_TAIL: f64 = 0.05;
/// Default gap between repeated trials (s).
pub const DEFAULT_TRIAL_GAP: f64 = 0.2;

#[derive(Debug, Error)]
pub enum StimulusError {
    #[error("invalid pattern argument: {0}")]
    InvalidArgument(String),
    #[error("pattern csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    #[serde(rename = "t_seconds")]
    pub t: f64,
    pub tag: SourceTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    events: Vec<SpikeEvent>,
    duration: f64,
}

impl Pattern {
    /// Build a pattern; events are sorted by time with ties ordered by tag.
    pub fn new(mut events: Vec<SpikeEvent>, duration: f64) -> Result<Self, StimulusError> {
        if events.iter().any(|e| !(e.t >= 0.0) || !e.t.is_finite()) {
            return Err(StimulusError::InvalidArgument("event times must be finite and >= 0".into()));
        }
        sort_events(&mut events);
        let last = events.last().map_or(0.0, |e| e.t);
        if !(duration >= last) {
            return Err(StimulusError::InvalidArgument(format!(
                "duration {duration} shorter than last event at {last}"
            )));
        }
        Ok(Self { events, duration })
    }

    pub fn events(&self) -> &[SpikeEvent] {
        &self.events
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Time of the last event.
    pub fn span(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.t)
    }

    /// Merge `other` shifted by `offset` into this pattern.
    pub fn concat(&self, other: &Pattern, offset: f64) -> Pattern {
        let mut events = self.events.clone();
        events.extend(other.events.iter().map(|e| SpikeEvent {
            t: e.t + offset,
            tag: e.tag,
        }));
        sort_events(&mut events);
        Pattern {
            events,
            duration: self.duration.max(offset + other.duration),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), StimulusError> {
        let mut wtr = csv::Writer::from_writer(w);
        for e in &self.events {
            wtr.serialize(e)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Read a `t_seconds,tag` table. The duration is set to the last event time.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, StimulusError> {
        let mut rdr = csv::Reader::from_reader(r);
        let events = rdr
            .deserialize()
            .collect::<Result<Vec<SpikeEvent>, _>>()?;
        let last = events.iter().map(|e| e.t).fold(0.0, f64::max);
        Pattern::new(events, last)
    }
}

fn sort_events(events: &mut [SpikeEvent]) {
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.tag.cmp(&b.tag)));
}

fn check_isi(isi: f64) -> Result<(), StimulusError> {
    if !(isi >= 0.0) || !isi.is_finite() {
        return Err(StimulusError::InvalidArgument(format!("isi must be >= 0, got {isi}")));
    }
    Ok(())
}

/// One spike on `tag_a` at 0 and one on `tag_b` at `isi`.
pub fn gen_pair(isi: f64, tag_a: SourceTag, tag_b: SourceTag) -> Result<Pattern, StimulusError> {
    check_isi(isi)?;
    Pattern::new(
        vec![
            SpikeEvent { t: 0.0, tag: tag_a },
            SpikeEvent { t: isi, tag: tag_b },
        ],
        isi + RESPONSE_TAIL,
    )
}

/// Excitatory spikes at 0, isi and 2 isi, plus one inhibitory spike at 0.
pub fn gen_triplet(
    isi: f64,
    exc_tags: (SourceTag, SourceTag, SourceTag),
    inh_tag: SourceTag,
) -> Result<Pattern, StimulusError> {
    check_isi(isi)?;
    Pattern::new(
        vec![
            SpikeEvent { t: 0.0, tag: exc_tags.0 },
            SpikeEvent { t: isi, tag: exc_tags.1 },
            SpikeEvent { t: 2.0 * isi, tag: exc_tags.2 },
            SpikeEvent { t: 0.0, tag: inh_tag },
        ],
        2.0 * isi + RESPONSE_TAIL,
    )
}

pub fn gen_single(tag: SourceTag) -> Pattern {
    Pattern {
        events: vec![SpikeEvent { t: 0.0, tag }],
        duration: SINGLE_DURATION,
    }
}

/// `n` copies of a pattern with recorded trial boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedPattern {
    pub pattern: Pattern,
    /// Start time of each trial; trial k spans `[starts[k], starts[k] + period)`.
    pub starts: Vec<f64>,
    pub period: f64,
}

impl RepeatedPattern {
    /// Trial index containing time `t`, if any.
    pub fn trial_of(&self, t: f64) -> Option<usize> {
        let k = self.starts.partition_point(|&s| s <= t);
        (k > 0 && t < self.starts[k - 1] + self.period).then(|| k - 1)
    }
}

/// Copy `p` n times, the k-th shifted by `k * (duration + gap)`.
pub fn repeat_pattern(p: &Pattern, n: usize, gap: f64) -> Result<RepeatedPattern, StimulusError> {
    if n == 0 {
        return Err(StimulusError::InvalidArgument("n must be >= 1".into()));
    }
    if !(gap >= 0.0) {
        return Err(StimulusError::InvalidArgument(format!("gap must be >= 0, got {gap}")));
    }
    let period = p.duration + gap;
    let mut events = Vec::with_capacity(p.events.len() * n);
    let mut starts = Vec::with_capacity(n);
    for k in 0..n {
        let offset = k as f64 * period;
        starts.push(offset);
        events.extend(p.events.iter().map(|e| SpikeEvent {
            t: e.t + offset,
            tag: e.tag,
        }));
    }
    sort_events(&mut events);
    let duration = if n == 1 {
        p.duration
    } else {
        (n - 1) as f64 * period + p.duration
    };
    Ok(RepeatedPattern {
        pattern: Pattern { events, duration },
        starts,
        period,
    })
}

/// ISIs 0, step, 2 step, ..., up to and including `max`.
pub fn isi_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: SourceTag = SourceTag(10);
    const B: SourceTag = SourceTag(11);

    #[test]
    fn pair_examples() {
        let p = gen_pair(0.0, B, A).unwrap();
        assert_eq!(p.events()[0], SpikeEvent { t: 0.0, tag: A });
        assert_eq!(p.events()[1], SpikeEvent { t: 0.0, tag: B });
        let p = gen_pair(5e-3, A, B).unwrap();
        assert_eq!(p.events()[1].t, 5e-3);
        assert!(gen_pair(-1e-3, A, B).is_err());
    }

    #[test]
    fn default_grid_has_eleven_points() {
        let grid = isi_grid(10e-3, 1e-3);
        assert_eq!(grid.len(), 11);
        let patterns: Vec<_> = grid.iter().map(|&isi| gen_pair(isi, A, B).unwrap()).collect();
        assert_eq!(patterns.len(), 11);
        assert!((grid[10] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn triplet_timing() {
        let tags = (SourceTag(1), SourceTag(2), SourceTag(3));
        let p = gen_triplet(5e-3, tags, SourceTag(4)).unwrap();
        let times: Vec<(f64, u32)> = p.events().iter().map(|e| (e.t, e.tag.0)).collect();
        assert_eq!(times, vec![(0.0, 1), (0.0, 4), (5e-3, 2), (10e-3, 3)]);
        let p = gen_triplet(10e-3, tags, SourceTag(4)).unwrap();
        assert!((p.span() - 20e-3).abs() < 1e-15);
        let p = gen_triplet(0.0, tags, SourceTag(4)).unwrap();
        assert!(p.events().iter().all(|e| e.t == 0.0));
    }

    #[test]
    fn single_examples() {
        let p = gen_single(SourceTag(7));
        assert_eq!(p.events(), &[SpikeEvent { t: 0.0, tag: SourceTag(7) }]);
        assert_eq!(p.duration(), SINGLE_DURATION);
        let two = p.concat(&p, 0.3);
        assert_eq!(two.events().len(), 2);
        assert_eq!(two.events()[1].t - two.events()[0].t, 0.3);
    }

    #[test]
    fn repeat_examples() {
        let p = gen_pair(3e-3, A, B).unwrap();
        let r = repeat_pattern(&p, 1, 0.5).unwrap();
        assert_eq!(r.pattern, p);
        let r = repeat_pattern(&p, 2, 0.5).unwrap();
        assert_eq!(r.pattern.events().len(), 4);
        assert!((r.pattern.events()[2].t - (p.duration() + 0.5)).abs() < 1e-15);
        let r = repeat_pattern(&p, 100, DEFAULT_TRIAL_GAP).unwrap();
        assert_eq!(r.starts.len(), 100);
        assert!(repeat_pattern(&p, 0, 0.1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = gen_triplet(4e-3, (SourceTag(1), SourceTag(2), SourceTag(3)), SourceTag(9)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_seconds,tag\n"));
        let back = Pattern::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.events(), p.events());
    }

    fn arb_pattern() -> impl Strategy<Value = Pattern> {
        prop::collection::vec((0.0f64..0.05, 0u32..6), 1..12).prop_map(|v| {
            let events = v.into_iter().map(|(t, tag)| SpikeEvent { t, tag: SourceTag(tag) }).collect();
            Pattern::new(events, 0.05).unwrap()
        })
    }

    fn is_sorted(p: &Pattern) -> bool {
        p.events()
            .windows(2)
            .all(|w| w[0].t < w[1].t || (w[0].t == w[1].t && w[0].tag <= w[1].tag))
    }

    proptest! {
        #[test]
        fn composition_keeps_order(a in arb_pattern(), b in arb_pattern(), off in 0.0f64..0.1) {
            prop_assert!(is_sorted(&a.concat(&b, off)));
        }

        #[test]
        fn repeat_partitions_events(p in arb_pattern(), n in 1usize..6, gap in 0.0f64..0.3) {
            let r = repeat_pattern(&p, n, gap).unwrap();
            prop_assert!(is_sorted(&r.pattern));
            let mut counts = vec![0usize; n];
            for e in r.pattern.events() {
                counts[r.trial_of(e.t).unwrap()] += 1;
            }
            prop_assert!(counts.iter().all(|&c| c == p.events().len()));
        }

        #[test]
        fn generators_are_pure(isi in 0.0f64..0.02) {
            prop_assert_eq!(gen_pair(isi, A, B).unwrap(), gen_pair(isi, A, B).unwrap());
        }
    }
}
