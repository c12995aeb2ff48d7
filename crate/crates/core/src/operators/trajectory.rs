//! Golden-angle radial sampling of a dynamic sequence.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Range;

use crate::error::{Error, Result};

/// `pi * (sqrt(5) - 1) / 2`, about 111.246 degrees.
pub const GOLDEN_ANGLE: f64 = 1.941_611_038_725_466_4;

/// Spokes needed for Nyquist sampling of an `n`-pixel field of view,
/// `ceil(pi/2 * n)`.
pub fn nyquist_spokes(n: usize) -> usize {
    (PI / 2.0 * n as f64).ceil() as usize
}

/// Spokes per frame giving the requested acceleration relative to
/// [`nyquist_spokes`].
pub fn spokes_for_acceleration(n: usize, acceleration: f64) -> Result<usize> {
    if !(acceleration >= 1.0) {
        return Err(Error::Config(format!("acceleration must be >= 1, got {acceleration}")));
    }
    Ok(((nyquist_spokes(n) as f64 / acceleration).round() as usize).max(1))
}

/// Radial spokes of all frames. Spoke `s` (global index over the whole
/// acquisition) has angle `mod(s * GOLDEN_ANGLE, pi)`; frames receive
/// contiguous blocks of spokes.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialTrajectory {
    frame_spokes: Vec<usize>,
    samples_per_spoke: usize,
}

impl RadialTrajectory {
    /// `spokes_per_frame` spokes in each of `n_frames` frames.
    pub fn golden_angle(spokes_per_frame: usize, samples_per_spoke: usize, n_frames: usize) -> Result<Self> {
        if spokes_per_frame == 0 {
            return Err(Error::Config("spokes per frame must be >= 1".into()));
        }
        Self::golden_angle_total(spokes_per_frame * n_frames, samples_per_spoke, n_frames)
    }

    /// `total_spokes` divided evenly over frames; the remainder goes to the
    /// earliest frames.
    pub fn golden_angle_total(total_spokes: usize, samples_per_spoke: usize, n_frames: usize) -> Result<Self> {
        if samples_per_spoke == 0 || n_frames == 0 || total_spokes < n_frames {
            return Err(Error::Config(format!(
                "invalid trajectory: {total_spokes} spokes, {samples_per_spoke} samples/spoke, {n_frames} frames"
            )));
        }
        let base = total_spokes / n_frames;
        let extra = total_spokes % n_frames;
        let frame_spokes = (0..n_frames).map(|f| base + usize::from(f < extra)).collect();
        Ok(RadialTrajectory { frame_spokes, samples_per_spoke })
    }

    pub fn n_frames(&self) -> usize {
        self.frame_spokes.len()
    }

    pub fn samples_per_spoke(&self) -> usize {
        self.samples_per_spoke
    }

    pub fn total_spokes(&self) -> usize {
        self.frame_spokes.iter().sum()
    }

    pub fn frame_spoke_counts(&self) -> &[usize] {
        &self.frame_spokes
    }

    /// Global spoke indices belonging to frame `f`.
    pub fn spokes_in_frame(&self, f: usize) -> Range<usize> {
        let start: usize = self.frame_spokes[..f].iter().sum();
        start..start + self.frame_spokes[f]
    }

    pub fn frame_of_spoke(&self, s: usize) -> usize {
        let mut acc = 0;
        for (f, &n) in self.frame_spokes.iter().enumerate() {
            acc += n;
            if s < acc {
                return f;
            }
        }
        self.n_frames() - 1
    }

    pub fn angle(&self, s: usize) -> f64 {
        (s as f64 * GOLDEN_ANGLE).rem_euclid(PI)
    }

    /// Signed radius of sample `j` along a spoke: `2*pi*(j - n/2)/n`, which
    /// lies in `[-pi, pi)` and hits zero at `j = n/2`.
    pub fn radius(&self, j: usize) -> f64 {
        let n = self.samples_per_spoke;
        2.0 * PI * (j as f64 - (n / 2) as f64) / n as f64
    }

    pub fn spoke_coords(&self, s: usize) -> Vec<[f64; 2]> {
        let (sin, cos) = self.angle(s).sin_cos();
        (0..self.samples_per_spoke)
            .map(|j| {
                let r = self.radius(j);
                [r * cos, r * sin]
            })
            .collect()
    }

    /// All k-space coordinates of frame `f`, spoke-major.
    pub fn frame_coords(&self, f: usize) -> Vec<[f64; 2]> {
        self.spokes_in_frame(f).flat_map(|s| self.spoke_coords(s)).collect()
    }

    /// CSV dump: `spoke,frame,angle,sample,kx,ky`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "spoke,frame,angle,sample,kx,ky")?;
        for s in 0..self.total_spokes() {
            let f = self.frame_of_spoke(s);
            let a = self.angle(s);
            for (j, [kx, ky]) in self.spoke_coords(s).into_iter().enumerate() {
                writeln!(w, "{s},{f},{a:.12},{j},{kx:.12},{ky:.12}")?;
            }
        }
        Ok(())
    }
}
