//! Best-path decoding, Viterbi forced alignment and segment extraction.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{collapse, Alphabet, LabelSequence, Role, StateTrellis, TopologyKind};

/// A maximal run of one trellis state, frame indices inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub class_id: usize,
    pub role: Role,
    pub label_position: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl Segment {
    pub fn frames(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }
}

/// Wire form of a segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub label: String,
    pub role: Role,
    pub start: usize,
    pub end: usize,
}

pub fn segment_records(segments: &[Segment], alphabet: &Alphabet) -> Vec<SegmentRecord> {
    segments
        .iter()
        .map(|s| SegmentRecord {
            label: alphabet.name(s.class_id).to_string(),
            role: s.role,
            start: s.start_frame,
            end: s.end_frame,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub state_path: Vec<usize>,
    pub log_prob: f64,
    pub segments: Vec<Segment>,
}

impl Alignment {
    pub fn class_path(&self, trellis: &StateTrellis) -> Vec<usize> {
        self.state_path.iter().map(|&s| trellis.class_of(s)).collect()
    }

    /// Character segments in label order.
    pub fn characters(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.role == Role::Character)
    }
}

/// Per-frame argmax, lowest class index on ties.
pub fn frame_argmax(probs: ArrayView2<'_, f64>) -> Vec<usize> {
    probs
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Best-path decoding: argmax per frame, then collapse.
pub fn greedy_decode(probs: &Array2<f64>, alphabet: &Alphabet, kind: TopologyKind) -> Result<LabelSequence> {
    collapse(&frame_argmax(probs.view()), alphabet, kind)
}

/// Max-product alignment over log emissions.
///
/// Ties prefer the self-loop, then the lowest predecessor index; among end
/// states the lowest index wins.
pub fn viterbi_log(log_probs: ArrayView2<'_, f64>, trellis: &StateTrellis) -> Result<Alignment> {
    let (t_len, k) = log_probs.dim();
    let min = trellis.min_frames();
    if t_len < min {
        return Err(Error::Infeasible {
            frames: t_len,
            min_frames: min,
        });
    }
    if let Some(s) = trellis.states().iter().find(|s| s.class_id >= k) {
        return Err(Error::ClassOutOfRange {
            index: s.class_id,
            classes: k,
        });
    }
    let s_len = trellis.len();
    let mut score = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);
    let mut back = Array2::<usize>::zeros((t_len, s_len));
    for &s in trellis.start_states() {
        score[[0, s]] = log_probs[[0, trellis.class_of(s)]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let preds = trellis.predecessors(s);
            let mut best = preds[0];
            for &p in &preds[1..] {
                if score[[t - 1, p]] > score[[t - 1, best]] {
                    best = p;
                }
            }
            score[[t, s]] = score[[t - 1, best]] + log_probs[[t, trellis.class_of(s)]];
            back[[t, s]] = best;
        }
    }
    let ends = trellis.end_states();
    let mut last = ends[0];
    for &s in &ends[1..] {
        if score[[t_len - 1, s]] > score[[t_len - 1, last]] {
            last = s;
        }
    }
    let log_prob = score[[t_len - 1, last]];
    if log_prob == f64::NEG_INFINITY {
        return Err(Error::Infeasible {
            frames: t_len,
            min_frames: min,
        });
    }
    let mut state_path = vec![0; t_len];
    state_path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        state_path[t - 1] = back[[t, state_path[t]]];
    }
    let segments = extract_segments(&state_path, trellis);
    Ok(Alignment {
        state_path,
        log_prob,
        segments,
    })
}

/// Viterbi forced alignment over a `T x K` probability matrix.
pub fn viterbi_align(probs: &Array2<f64>, trellis: &StateTrellis) -> Result<Alignment> {
    viterbi_log(probs.mapv(f64::ln).view(), trellis)
}

/// Run-length encodes a state path into segments.
pub fn extract_segments(state_path: &[usize], trellis: &StateTrellis) -> Vec<Segment> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut prev = None;
    for (t, &s) in state_path.iter().enumerate() {
        if prev == Some(s) {
            if let Some(last) = segments.last_mut() {
                last.end_frame = t;
            }
        } else {
            let st = trellis.state(s);
            segments.push(Segment {
                class_id: st.class_id,
                role: st.role,
                label_position: st.label_position,
                start_frame: t,
                end_frame: t,
            });
        }
        prev = Some(s);
    }
    segments
}

/// Folds each foreground segment into the character segment that follows it,
/// giving one span per spoken character. Other segments pass through.
pub fn speech_spans(segments: &[Segment]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    let mut pending: Option<Segment> = None;
    for seg in segments {
        match seg.role {
            Role::Foreground => {
                pending = Some(match pending {
                    Some(p) => Segment {
                        end_frame: seg.end_frame,
                        ..p
                    },
                    None => *seg,
                });
            }
            Role::Character => {
                let start = pending.take().map_or(seg.start_frame, |p| p.start_frame);
                out.push(Segment {
                    start_frame: start,
                    ..*seg
                });
            }
            _ => {
                if let Some(p) = pending.take() {
                    out.push(p);
                }
                out.push(*seg);
            }
        }
    }
    out.extend(pending);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{log_forward, sequence_log_likelihood};
    use crate::topology::{expand_ctc, expand_tcs};
    use ndarray::Array2;

    fn one_hot_probs(alpha: &Alphabet, s: &str, floor: f64) -> Array2<f64> {
        let k = alpha.len();
        let classes: Vec<usize> = s.chars().map(|c| alpha.index_of(&c.to_string()).unwrap()).collect();
        let mut p = Array2::from_elem((classes.len(), k), floor);
        for (t, &c) in classes.iter().enumerate() {
            p[[t, c]] = 1.0 - floor * (k - 1) as f64;
        }
        p
    }

    #[test]
    fn greedy_examples() {
        let tcs = Alphabet::tcs(["A", "C", "T"]).unwrap();
        let p = one_hot_probs(&tcs, "~~+C+A+T~", 0.05);
        let out = greedy_decode(&p, &tcs, TopologyKind::Tcs).unwrap();
        assert_eq!(tcs.label_names(&out).concat(), "CAT");

        let p = one_hot_probs(&tcs, "~~~~", 0.1);
        assert!(greedy_decode(&p, &tcs, TopologyKind::Tcs).unwrap().is_empty());

        let ctc = Alphabet::ctc(["A"]).unwrap();
        let p = one_hot_probs(&ctc, "/AA//A", 0.2);
        assert_eq!(greedy_decode(&p, &ctc, TopologyKind::Ctc).unwrap().ids(), &[0, 0]);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let p = Array2::from_elem((2, 3), 1.0 / 3.0);
        assert_eq!(frame_argmax(p.view()), vec![0, 0]);
    }

    #[test]
    fn tcs_unique_path_alignment() {
        let a = Alphabet::tcs(["A"]).unwrap();
        let t = expand_tcs(&LabelSequence::new(vec![0]), &a).unwrap();
        let probs = Array2::from_elem((2, 3), 1.0 / 3.0);
        let al = viterbi_align(&probs, &t).unwrap();
        assert_eq!(al.state_path, vec![1, 2]);
        assert!((al.log_prob - (1.0f64 / 9.0).ln()).abs() < 1e-12);
        assert_eq!(al.segments.len(), 2);
        assert_eq!(al.segments[0].role, Role::Foreground);
        assert_eq!(al.segments[1].role, Role::Character);
    }

    #[test]
    fn concentrated_probs_recover_path() {
        let a = Alphabet::tcs(["A", "C", "T"]).unwrap();
        let labels = LabelSequence::new(vec![1, 0, 2]);
        let t = expand_tcs(&labels, &a).unwrap();
        let p = one_hot_probs(&a, "~~+CC~+AA+T~~", 1e-6);
        let al = viterbi_align(&p, &t).unwrap();
        assert_eq!(al.state_path, vec![0, 0, 1, 2, 2, 3, 4, 5, 5, 7, 8, 9, 9]);
        assert!(t.is_valid_path(&al.state_path));
        let cp = al.class_path(&t);
        assert_eq!(collapse(&cp, &a, TopologyKind::Tcs).unwrap(), labels);
    }

    #[test]
    fn viterbi_never_beats_forward() {
        let a = Alphabet::ctc(["A", "B"]).unwrap();
        let labels = LabelSequence::new(vec![0, 1, 1]);
        let t = expand_ctc(&labels, &a).unwrap();
        let probs = Array2::from_shape_fn((7, 3), |(i, k)| 0.2 + ((i * 5 + k * 3) % 7) as f64 / 10.0);
        let probs = &probs / &probs.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
        let al = viterbi_align(&probs, &t).unwrap();
        let ll = sequence_log_likelihood(&log_forward(&probs, &t).unwrap(), &t);
        assert!(al.log_prob <= ll + 1e-12);
        assert!(t.is_valid_path(&al.state_path));
    }

    #[test]
    fn viterbi_infeasible() {
        let a = Alphabet::tcs(["A"]).unwrap();
        let t = expand_tcs(&LabelSequence::new(vec![0, 0]), &a).unwrap();
        let probs = Array2::from_elem((3, 3), 1.0 / 3.0);
        assert!(matches!(
            viterbi_align(&probs, &t),
            Err(Error::Infeasible { min_frames: 4, .. })
        ));
    }

    #[test]
    fn segments_run_length() {
        let a = Alphabet::tcs(["A"]).unwrap();
        let t = expand_tcs(&LabelSequence::new(vec![0]), &a).unwrap();
        let segs = extract_segments(&[0, 0, 1, 2, 2, 3], &t);
        let spans: Vec<_> = segs.iter().map(|s| (s.role, s.start_frame, s.end_frame)).collect();
        assert_eq!(
            spans,
            vec![
                (Role::Background, 0, 1),
                (Role::Foreground, 2, 2),
                (Role::Character, 3, 4),
                (Role::Background, 5, 5)
            ]
        );
        let one = extract_segments(&[0], &t);
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].start_frame, one[0].end_frame), (0, 0));

        let merged = speech_spans(&segs);
        let spans: Vec<_> = merged.iter().map(|s| (s.role, s.start_frame, s.end_frame)).collect();
        assert_eq!(
            spans,
            vec![
                (Role::Background, 0, 1),
                (Role::Character, 2, 4),
                (Role::Background, 5, 5)
            ]
        );
    }

    #[test]
    fn records_serialize() {
        let a = Alphabet::tcs(["A"]).unwrap();
        let t = expand_tcs(&LabelSequence::new(vec![0]), &a).unwrap();
        let recs = segment_records(&extract_segments(&[1, 2], &t), &a);
        assert_eq!(
            serde_json::to_string(&recs).unwrap(),
            r#"[{"label":"+","role":"foreground","start":0,"end":0},{"label":"A","role":"character","start":1,"end":1}]"#
        );
    }
}
