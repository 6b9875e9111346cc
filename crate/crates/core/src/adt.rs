//! Space-frequency ↔ angle-delay transforms.
//!
//! Angle bins come from a unitary DFT over the antenna axis, delay taps
//! from a unitary IDFT over the subcarrier axis, so Frobenius norms are
//! preserved exactly (up to rounding).

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::scene::ChannelSequence;
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub dt: f64,
    pub fc: f64,
    pub velocity: [f64; 2],
    pub city_tag: String,
}

impl SequenceMeta {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Truncated angle-delay frames of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdSequence {
    pub frames: Vec<Frame>,
    /// Scale divided out by [`rms_normalize`]; 1 for raw sequences.
    pub rms: f64,
    pub meta: SequenceMeta,
}

impl AdSequence {
    pub fn new(frames: Vec<Frame>, meta: SequenceMeta) -> Self {
        AdSequence { frames, rms: 1.0, meta }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let f = &self.frames[0];
        (self.frames.len(), f.rows, f.cols)
    }

    pub fn energy(&self) -> f64 {
        self.frames.iter().map(Frame::energy).sum()
    }

    pub fn mean_power(&self) -> f64 {
        let (t, h, w) = self.dims();
        self.energy() / (t * h * w) as f64
    }

    /// First `t` frames.
    pub fn slice(&self, t: usize) -> AdSequence {
        AdSequence {
            frames: self.frames[..t].to_vec(),
            rms: self.rms,
            meta: self.meta.clone(),
        }
    }
}

/// Cached FFT plans for one (antennas, subcarriers) shape.
pub struct AngleDelayTransform {
    n: usize,
    m: usize,
    ang_fwd: Arc<dyn Fft<f64>>,
    ang_inv: Arc<dyn Fft<f64>>,
    del_fwd: Arc<dyn Fft<f64>>,
    del_inv: Arc<dyn Fft<f64>>,
}

impl AngleDelayTransform {
    pub fn new(n: usize, m: usize) -> Self {
        let mut planner = FftPlanner::new();
        AngleDelayTransform {
            n,
            m,
            ang_fwd: planner.plan_fft_forward(n),
            ang_inv: planner.plan_fft_inverse(n),
            del_fwd: planner.plan_fft_forward(m),
            del_inv: planner.plan_fft_inverse(m),
        }
    }

    fn apply(&self, frame: &Frame, ang: &Arc<dyn Fft<f64>>, del: &Arc<dyn Fft<f64>>) -> Frame {
        assert_eq!((frame.rows, frame.cols), (self.n, self.m), "frame shape");
        let (n, m) = (self.n, self.m);
        let scale = 1.0 / ((n * m) as f64).sqrt();
        let mut out = frame.clone();
        // rows: subcarrier axis
        for row in out.data.chunks_mut(m) {
            del.process(row);
        }
        // columns: antenna axis
        let mut col = vec![C64::new(0.0, 0.0); n];
        for c in 0..m {
            for r in 0..n {
                col[r] = out.data[r * m + c];
            }
            ang.process(&mut col);
            for r in 0..n {
                out.data[r * m + c] = col[r] * scale;
            }
        }
        out
    }

    pub fn to_angle_delay(&self, frame: &Frame) -> Frame {
        self.apply(frame, &self.ang_fwd, &self.del_inv)
    }

    pub fn from_angle_delay(&self, frame: &Frame) -> Frame {
        self.apply(frame, &self.ang_inv, &self.del_fwd)
    }
}

pub fn to_angle_delay(frame: &Frame) -> Frame {
    AngleDelayTransform::new(frame.rows, frame.cols).to_angle_delay(frame)
}

pub fn from_angle_delay(frame: &Frame) -> Frame {
    AngleDelayTransform::new(frame.rows, frame.cols).from_angle_delay(frame)
}

/// Keep delay taps `[0, w)`; returns the frame and the retained energy fraction.
pub fn truncate_delay(frame: &Frame, w: usize) -> Result<(Frame, f64)> {
    if w == 0 || w > frame.cols {
        return Err(Error::invalid(format!(
            "W = {w} outside [1, {}]",
            frame.cols
        )));
    }
    let out = Frame::from_fn(frame.rows, w, |r, c| frame.get(r, c));
    let total = frame.energy();
    let kept = if total > 0.0 { out.energy() / total } else { 1.0 };
    Ok((out, kept))
}

/// Divide by the RMS over all retained entries.
pub fn rms_normalize(seq: &AdSequence) -> Result<AdSequence> {
    let p = seq.mean_power();
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::DegenerateSample);
    }
    let r = p.sqrt();
    let mut out = seq.clone();
    for f in &mut out.frames {
        f.scale(1.0 / r);
    }
    out.rms = seq.rms * r;
    Ok(out)
}

/// Angle-delay frames truncated to `w` taps, unnormalized.
pub fn sequence_to_angle_delay(seq: &ChannelSequence, w: usize) -> Result<AdSequence> {
    let first = seq
        .frames
        .first()
        .ok_or_else(|| Error::invalid("empty channel sequence"))?;
    let tf = AngleDelayTransform::new(first.rows, first.cols);
    let frames = seq
        .frames
        .iter()
        .map(|f| truncate_delay(&tf.to_angle_delay(f), w).map(|(t, _)| t))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdSequence::new(
        frames,
        SequenceMeta {
            dt: seq.dt,
            fc: seq.fc,
            velocity: seq.velocity,
            city_tag: seq.city_tag.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn meta() -> SequenceMeta {
        SequenceMeta {
            dt: 1e-3,
            fc: 3.5e9,
            velocity: [0.0, 0.0],
            city_tag: "t".into(),
        }
    }

    #[test]
    fn constant_frame_maps_to_dc() {
        let ones = Frame::from_fn(32, 32, |_, _| C64::new(1.0, 0.0));
        let ad = to_angle_delay(&ones);
        assert!((ad.get(0, 0) - C64::new(32.0, 0.0)).norm() < 1e-9);
        let rest: f64 = ad.data[1..].iter().map(|z| z.norm()).sum();
        assert!(rest < 1e-9);
    }

    #[test]
    fn linear_phase_maps_to_one_delay_column() {
        let (n, m, p) = (8, 16, 5);
        let f = Frame::from_fn(n, m, |_, k| C64::from_polar(1.0, -2.0 * PI * (k * p) as f64 / m as f64));
        let ad = to_angle_delay(&f);
        for r in 0..n {
            for c in 0..m {
                if c != p {
                    assert!(ad.get(r, c).norm() < 1e-9);
                }
            }
        }
        assert!((ad.get(0, p).norm() - ((n * m) as f64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn impulse_inverts_to_constant() {
        let mut imp = Frame::zeros(32, 32);
        imp.set(0, 0, C64::new(1.0, 0.0));
        let sf = from_angle_delay(&imp);
        for z in &sf.data {
            assert!((z - C64::new(1.0 / 32.0, 0.0)).norm() < 1e-12);
        }
        assert_eq!(from_angle_delay(&Frame::zeros(4, 8)), Frame::zeros(4, 8));
    }

    #[test]
    fn truncation_cases() {
        let f = Frame::from_fn(4, 8, |r, c| C64::new((r + c) as f64, 1.0));
        let (same, kept) = truncate_delay(&f, 8).unwrap();
        assert_eq!(same, f);
        assert_eq!(kept, 1.0);
        let mut imp = Frame::zeros(4, 8);
        imp.set(2, 0, C64::new(3.0, -1.0));
        assert_eq!(truncate_delay(&imp, 1).unwrap().1, 1.0);
        assert!(truncate_delay(&f, 0).is_err());
        assert!(truncate_delay(&f, 9).is_err());
    }

    #[test]
    fn rms_normalize_properties() {
        let f = Frame::from_fn(4, 4, |r, c| C64::new(r as f64 - 1.5, c as f64 * 0.3));
        let seq = AdSequence::new(vec![f.clone(), f], meta());
        let a = rms_normalize(&seq).unwrap();
        assert!((a.mean_power() - 1.0).abs() < 1e-12);
        let mut scaled = seq.clone();
        for fr in &mut scaled.frames {
            fr.scale(7.0);
        }
        let b = rms_normalize(&scaled).unwrap();
        assert!(a.frames[0].max_abs_diff(&b.frames[0]) < 1e-12);
        assert!((b.rms / a.rms - 7.0).abs() < 1e-12);
        let again = rms_normalize(&a).unwrap();
        assert!(again.frames[1].max_abs_diff(&a.frames[1]) < 1e-12);
        assert!((again.rms - a.rms).abs() < 1e-12);

        let zero = AdSequence::new(vec![Frame::zeros(2, 2)], meta());
        assert!(matches!(rms_normalize(&zero), Err(Error::DegenerateSample)));
    }
}
