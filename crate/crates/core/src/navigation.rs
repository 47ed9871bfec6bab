//! Junction counting and pre-programmed turns.
//!
//! Per-frame labels feed a debounced counter: `k` consecutive junction frames
//! count one junction and latch; the latch releases only after `k` consecutive
//! non-junction frames, so one physical junction is counted once however long
//! it stays in view. Each counted junction is looked up in the turn plan.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::classifier::{preprocess_frame, FrameClassifier, JuncNetConfig};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::network::{argmax_rows, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Observation {
    Junction,
    None,
}

impl FromStr for Observation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "junction" | "j" | "1" => Ok(Observation::Junction),
            "none" | "n" | "0" => Ok(Observation::None),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Left,
    Right,
    Straight,
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LEFT" => Ok(Action::Left),
            "RIGHT" => Ok(Action::Right),
            "STRAIGHT" => Ok(Action::Straight),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    /// 1-based junction ordinal.
    pub junction_index: usize,
    pub action: Action,
    /// Signed heading change, positive to the left.
    pub yaw_degrees: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TurnPlan {
    entries: Vec<PlanEntry>,
}

impl TurnPlan {
    /// Indices must be positive and strictly increasing, `|yaw| <= 180`, and
    /// the yaw sign must agree with the action (LEFT > 0, RIGHT < 0,
    /// STRAIGHT = 0).
    pub fn new(entries: Vec<PlanEntry>) -> Result<Self> {
        let mut prev = 0;
        for e in &entries {
            if e.junction_index <= prev {
                return Err(Error::Invariant(format!(
                    "junction index {} does not increase past {prev}",
                    e.junction_index
                )));
            }
            prev = e.junction_index;
            let y = e.yaw_degrees;
            if !y.is_finite() || y.abs() > 180.0 {
                return Err(Error::Invariant(format!("yaw {y} outside [-180, 180]")));
            }
            let consistent = match e.action {
                Action::Left => y > 0.0,
                Action::Right => y < 0.0,
                Action::Straight => y == 0.0,
            };
            if !consistent {
                return Err(Error::Invariant(format!(
                    "junction {}: {:?} with yaw {y}",
                    e.junction_index, e.action
                )));
            }
        }
        Ok(TurnPlan { entries })
    }

    /// Parses `index,action,yaw_degrees` lines; blank lines and `#` comments
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: n + 1, message };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [index, action, yaw] = fields[..] else {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            };
            entries.push(PlanEntry {
                junction_index: index.parse().map_err(|_| err(format!("bad index {index:?}")))?,
                action: action.parse().map_err(err)?,
                yaw_degrees: yaw.parse().map_err(|_| err(format!("bad yaw {yaw:?}")))?,
            });
        }
        TurnPlan::new(entries)
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn entry_for(&self, junction_index: usize) -> Option<&PlanEntry> {
        self.entries
            .binary_search_by_key(&junction_index, |e| e.junction_index)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// The command issued on counting junction `junction_index`. Junctions
    /// without an entry go straight.
    pub fn command_for(&self, junction_index: usize) -> Command {
        match self.entry_for(junction_index) {
            Some(e) if e.action != Action::Straight => Command::yaw(e.yaw_degrees),
            _ => Command::NONE,
        }
    }
}

pub fn load_turn_plan(path: impl AsRef<Path>) -> Result<TurnPlan> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TurnPlan::parse(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Yaw,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub kind: CommandKind,
    /// Zero unless `kind` is `Yaw`.
    pub yaw_degrees: f64,
}

impl Command {
    pub const NONE: Command = Command {
        kind: CommandKind::None,
        yaw_degrees: 0.0,
    };

    pub fn yaw(degrees: f64) -> Self {
        Command {
            kind: CommandKind::Yaw,
            yaw_degrees: degrees,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NavState {
    pub junction_count: usize,
    pub consecutive_junction_frames: usize,
    pub in_junction: bool,
    pub debounce_k: usize,
    /// Non-junction frames still needed to release the latch.
    pub cooldown_frames_remaining: usize,
}

pub const DEFAULT_DEBOUNCE: usize = 5;

impl NavState {
    pub fn new(debounce_k: usize) -> Result<Self> {
        if debounce_k == 0 {
            return Err(Error::InvalidConfig("debounce_k must be at least 1".into()));
        }
        Ok(NavState {
            junction_count: 0,
            consecutive_junction_frames: 0,
            in_junction: false,
            debounce_k,
            cooldown_frames_remaining: 0,
        })
    }
}

impl Default for NavState {
    fn default() -> Self {
        NavState::new(DEFAULT_DEBOUNCE).expect("nonzero default")
    }
}

pub fn step(state: &NavState, obs: Observation, plan: &TurnPlan) -> (NavState, Command) {
    let mut s = *state;
    let k = s.debounce_k.max(1);
    match obs {
        Observation::Junction => {
            s.consecutive_junction_frames += 1;
            if s.in_junction {
                s.cooldown_frames_remaining = k;
            } else if s.consecutive_junction_frames >= k {
                s.junction_count += 1;
                s.in_junction = true;
                s.cooldown_frames_remaining = k;
                return (s, plan.command_for(s.junction_count));
            }
        }
        Observation::None => {
            s.consecutive_junction_frames = 0;
            if s.in_junction {
                s.cooldown_frames_remaining = s.cooldown_frames_remaining.saturating_sub(1);
                if s.cooldown_frames_remaining == 0 {
                    s.in_junction = false;
                }
            }
        }
    }
    (s, Command::NONE)
}

/// One line of the command log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub frame_index: usize,
    pub command: Command,
    /// Count after this frame.
    pub junction_count: usize,
}

impl fmt::Display for LogRecord {
    /// `frame_index,kind,yaw_degrees,junction_count`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.command.kind {
            CommandKind::Yaw => "YAW",
            CommandKind::None => "NONE",
        };
        write!(
            f,
            "{},{kind},{},{}",
            self.frame_index, self.command.yaw_degrees, self.junction_count
        )
    }
}

/// Steps from `state` through `labels`, numbering frames from `first_frame`.
pub fn simulate_from(
    state: NavState,
    labels: &[Observation],
    plan: &TurnPlan,
    first_frame: usize,
) -> (Vec<LogRecord>, NavState) {
    let mut s = state;
    let log = labels
        .iter()
        .enumerate()
        .map(|(i, &obs)| {
            let (next, command) = step(&s, obs, plan);
            s = next;
            LogRecord {
                frame_index: first_frame + i,
                command,
                junction_count: s.junction_count,
            }
        })
        .collect();
    (log, s)
}

pub fn simulate(labels: &[Observation], plan: &TurnPlan, debounce_k: usize) -> Result<(Vec<LogRecord>, NavState)> {
    Ok(simulate_from(NavState::new(debounce_k)?, labels, plan, 0))
}

pub fn format_log(log: &[LogRecord]) -> String {
    log.iter().map(|r| format!("{r}\n")).collect()
}

/// One label per line (`junction`/`none`, `j`/`n` or `1`/`0`); blank lines
/// and `#` comments are ignored.
pub fn parse_labels(text: &str) -> Result<Vec<Observation>> {
    text.lines()
        .enumerate()
        .filter_map(|(n, raw)| {
            let line = raw.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then(|| line.parse().map_err(|message| Error::Parse { line: n + 1, message }))
        })
        .collect()
}

/// Preprocesses and classifies each frame, then steps the counter. Class
/// `junction_class` of the classifier is read as a junction observation.
pub fn classify_and_navigate<I>(
    frames: I,
    clf: &impl FrameClassifier,
    plan: &TurnPlan,
    cfg: &JuncNetConfig,
    debounce_k: usize,
    junction_class: usize,
) -> Result<Vec<LogRecord>>
where
    I: IntoIterator<Item = GrayImage>,
{
    if junction_class >= clf.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: junction_class,
            classes: clf.num_classes(),
        });
    }
    let mut state = NavState::new(debounce_k)?;
    let mut log = Vec::new();
    for (i, frame) in frames.into_iter().enumerate() {
        let x: Tensor<f32> = preprocess_frame(&frame, cfg)?.cast();
        let [c, h, w] = clf.input_shape();
        let x = x.reshape(&[1, c, h, w])?;
        let class = argmax_rows(&clf.predict(&x)?)[0];
        let obs = if class == junction_class {
            Observation::Junction
        } else {
            Observation::None
        };
        let (next, command) = step(&state, obs, plan);
        state = next;
        log.push(LogRecord {
            frame_index: i,
            command,
            junction_count: state.junction_count,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Observation::{Junction as J, None as N};

    /// Independent reading of the counting rule: scan maximal junction runs;
    /// a gap of at least `k` non-junction frames before a run releases the
    /// latch, and an unlatched run of length at least `k` is counted at its
    /// `k`-th frame.
    fn oracle(labels: &[Observation], plan: &TurnPlan, k: usize) -> Vec<LogRecord> {
        let mut commands = vec![Command::NONE; labels.len()];
        let mut counts = vec![0; labels.len()];
        let mut count = 0;
        let mut latched = false;
        let mut gap = 0;
        let mut i = 0;
        while i < labels.len() {
            if labels[i] == N {
                gap += 1;
                counts[i] = count;
                i += 1;
                continue;
            }
            let start = i;
            while i < labels.len() && labels[i] == J {
                i += 1;
            }
            if gap >= k {
                latched = false;
            }
            gap = 0;
            let emit = (!latched && i - start >= k).then(|| start + k - 1);
            if let Some(e) = emit {
                count += 1;
                latched = true;
                commands[e] = plan.command_for(count);
            }
            for (f, c) in counts.iter_mut().enumerate().take(i).skip(start) {
                *c = if emit.is_some_and(|e| f < e) { count - 1 } else { count };
            }
        }
        (0..labels.len())
            .map(|f| LogRecord {
                frame_index: f,
                command: commands[f],
                junction_count: counts[f],
            })
            .collect()
    }

    fn plan(text: &str) -> TurnPlan {
        TurnPlan::parse(text).unwrap()
    }

    fn stream(segments: &[(Observation, usize)]) -> Vec<Observation> {
        segments.iter().flat_map(|&(o, n)| std::iter::repeat_n(o, n)).collect()
    }

    #[test]
    fn all_none_stream() {
        let (log, s) = simulate(&[N; 40], &plan("1,LEFT,90"), 5).unwrap();
        assert_eq!(s.junction_count, 0);
        assert!(log.iter().all(|r| r.command == Command::NONE));
    }

    #[test]
    fn single_segment_turns_once() {
        let labels = stream(&[(N, 3), (J, 8), (N, 6)]);
        let (log, s) = simulate(&labels, &plan("1,LEFT,90"), 5).unwrap();
        assert_eq!(s.junction_count, 1);
        let yaws: Vec<_> = log.iter().filter(|r| r.command.kind == CommandKind::Yaw).collect();
        assert_eq!(yaws.len(), 1);
        assert_eq!(yaws[0].frame_index, 3 + 4);
        assert_eq!(yaws[0].command.yaw_degrees, 90.0);
        assert!(!s.in_junction);
    }

    #[test]
    fn straight_plan_counts_without_turning() {
        let labels = stream(&[(J, 6), (N, 6), (J, 7), (N, 9), (J, 5)]);
        let p = plan("1,STRAIGHT,0\n2,STRAIGHT,0\n3,STRAIGHT,0");
        let (log, s) = simulate(&labels, &p, 5).unwrap();
        assert_eq!(s.junction_count, 3);
        assert!(log.iter().all(|r| r.command.kind == CommandKind::None));
    }

    #[test]
    fn sub_debounce_blips_are_ignored() {
        let k = 4;
        let labels: Vec<_> = (0..10).flat_map(|_| stream(&[(J, k - 1), (N, k)])).collect();
        let (_, s) = simulate(&labels, &TurnPlan::default(), k).unwrap();
        assert_eq!(s.junction_count, 0);
    }

    #[test]
    fn short_gap_keeps_the_latch() {
        let labels = stream(&[(J, 5), (N, 4), (J, 5)]);
        let (_, s) = simulate(&labels, &TurnPlan::default(), 5).unwrap();
        assert_eq!(s.junction_count, 1);
        assert!(s.in_junction);
    }

    #[test]
    fn beyond_plan_goes_straight() {
        let labels = stream(&[(J, 2), (N, 2), (J, 2)]);
        let (log, s) = simulate(&labels, &plan("1,RIGHT,-45"), 2).unwrap();
        assert_eq!(s.junction_count, 2);
        assert_eq!(log[1].command, Command::yaw(-45.0));
        assert_eq!(log[5].command, Command::NONE);
    }

    #[test]
    fn empty_stream_and_bad_debounce() {
        let (log, s) = simulate(&[], &TurnPlan::default(), 3).unwrap();
        assert!(log.is_empty());
        assert_eq!(s.junction_count, 0);
        assert!(simulate(&[J], &TurnPlan::default(), 0).is_err());
    }

    #[test]
    fn plan_parsing() {
        let p = plan("# turns\n1,LEFT,90\n\n3, right ,-90  # second\n");
        assert_eq!(p.entries().len(), 2);
        assert_eq!(p.entry_for(3).unwrap().action, Action::Right);
        assert!(p.entry_for(2).is_none());
        assert!(matches!(TurnPlan::parse("2,LEFT,-45"), Err(Error::Invariant(_))));
        assert!(matches!(
            TurnPlan::parse("1,LEFT,90\n1,RIGHT,-90"),
            Err(Error::Invariant(_))
        ));
        assert!(matches!(TurnPlan::parse("0,LEFT,90"), Err(Error::Invariant(_))));
        assert!(matches!(TurnPlan::parse("1,STRAIGHT,5"), Err(Error::Invariant(_))));
        assert!(matches!(TurnPlan::parse("1,LEFT,181"), Err(Error::Invariant(_))));
        assert!(matches!(TurnPlan::parse("1,LEFT"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            TurnPlan::parse("\nx,LEFT,9"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(TurnPlan::parse("1,UP,9"), Err(Error::Parse { .. })));
    }

    #[test]
    fn log_format() {
        let r = LogRecord {
            frame_index: 7,
            command: Command::yaw(-90.0),
            junction_count: 2,
        };
        assert_eq!(r.to_string(), "7,YAW,-90,2");
        let r = LogRecord {
            frame_index: 0,
            command: Command::NONE,
            junction_count: 0,
        };
        assert_eq!(format_log(&[r]), "0,NONE,0,0\n");
    }

    #[test]
    fn label_parsing() {
        assert_eq!(parse_labels("junction\nnone\n# c\nJ\n0\n").unwrap(), vec![J, N, J, N]);
        assert!(matches!(
            parse_labels("junction\nmaybe"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    fn arb_stream() -> impl Strategy<Value = Vec<Observation>> {
        // runs of random length make long segments likely
        prop::collection::vec((any::<bool>(), 1usize..15), 0..40).prop_map(|runs| {
            runs.into_iter()
                .flat_map(|(j, n)| std::iter::repeat_n(if j { J } else { N }, n))
                .take(500)
                .collect()
        })
    }

    fn arb_plan() -> impl Strategy<Value = TurnPlan> {
        prop::collection::btree_map(1usize..30, (0u8..3, 1u32..=180), 0..8).prop_map(|m| {
            let entries = m
                .into_iter()
                .map(|(idx, (a, deg))| {
                    let (action, yaw) = match a {
                        0 => (Action::Left, f64::from(deg)),
                        1 => (Action::Right, -f64::from(deg)),
                        _ => (Action::Straight, 0.0),
                    };
                    PlanEntry {
                        junction_index: idx,
                        action,
                        yaw_degrees: yaw,
                    }
                })
                .collect();
            TurnPlan::new(entries).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn matches_run_scanning_oracle(labels in arb_stream(), p in arb_plan(), k in 1usize..=10) {
            let (log, s) = simulate(&labels, &p, k).unwrap();
            prop_assert_eq!(&log, &oracle(&labels, &p, k));
            prop_assert_eq!(s.junction_count, log.last().map_or(0, |r| r.junction_count));
        }

        #[test]
        fn count_is_monotone_and_yaws_are_bounded(labels in arb_stream(), p in arb_plan(), k in 1usize..=10) {
            let (log, s) = simulate(&labels, &p, k).unwrap();
            prop_assert!(log.windows(2).all(|w| w[0].junction_count <= w[1].junction_count));
            let yaws: Vec<_> = log.iter().filter(|r| r.command.kind == CommandKind::Yaw).collect();
            prop_assert!(yaws.len() <= s.junction_count);
            prop_assert!(yaws.iter().all(|r| r.junction_count > 0));
            prop_assert!(log.iter().all(|r| r.command.kind == CommandKind::Yaw || r.command.yaw_degrees == 0.0));
        }

        #[test]
        fn split_and_resume(labels in arb_stream(), p in arb_plan(), k in 1usize..=10, cut in 0usize..500) {
            let cut = cut.min(labels.len());
            let (whole, end) = simulate(&labels, &p, k).unwrap();
            let (mut first, mid) = simulate(&labels[..cut], &p, k).unwrap();
            let (second, end2) = simulate_from(mid, &labels[cut..], &p, cut);
            first.extend(second);
            prop_assert_eq!(first, whole);
            prop_assert_eq!(end, end2);
        }
    }
}
