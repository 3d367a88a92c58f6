//! Attention-event detection from the gaze trajectory.
//!
//! Each new sample re-classifies the trailing `window` samples as saccade,
//! smooth pursuit or fixation using a dispersion test (max pairwise distance)
//! and an end-to-end speed test. An attention event fires once a steady run
//! (fixation or smooth pursuit) that directly follows a saccade has been
//! sustained for `min_duration_ms`.

use std::collections::VecDeque;

use crate::config::GazeConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Movement {
    Saccade,
    SmoothPursuit,
    Fixation,
}

impl Movement {
    pub fn is_steady(self) -> bool {
        self != Movement::Saccade
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Fixation,
    SmoothPursuit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionEvent {
    pub t_start: u64,
    pub t_end: u64,
    pub kind: AttentionKind,
    /// Largest window dispersion seen over the sustained interval.
    pub dispersion: f64,
}

/// Time-ordered gaze samples `(t_ms, [x, y])`.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeWindow {
    samples: Vec<(u64, [f64; 2])>,
}

impl GazeWindow {
    pub fn new(samples: Vec<(u64, [f64; 2])>) -> Result<Self> {
        if let Some(w) = samples.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::Data(format!(
                "gaze timestamps must strictly increase ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(u64, [f64; 2])] {
        &self.samples
    }

    pub fn span_ms(&self) -> u64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub dispersion: f64,
    /// Net displacement over the window divided by its duration, units/s.
    pub speed: f64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn window_stats<'a>(samples: impl IntoIterator<Item = &'a (u64, [f64; 2])>) -> WindowStats {
    let pts: Vec<&(u64, [f64; 2])> = samples.into_iter().collect();
    let mut dispersion = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            dispersion = dispersion.max(dist(a.1, b.1));
        }
    }
    let speed = match (pts.first(), pts.last()) {
        (Some(first), Some(last)) => {
            let d = dist(first.1, last.1);
            let dt = (last.0 - first.0) as f64 / 1000.0;
            if dt > 0.0 {
                d / dt
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        _ => 0.0,
    };
    WindowStats { dispersion, speed }
}

fn classify_stats(stats: WindowStats, cfg: &GazeConfig) -> Movement {
    if stats.dispersion <= cfg.rho_fix && stats.speed <= cfg.v_fix {
        Movement::Fixation
    } else if stats.dispersion <= cfg.rho_sp && stats.speed <= cfg.v_sp {
        Movement::SmoothPursuit
    } else {
        Movement::Saccade
    }
}

/// Classifies the trailing `cfg.window` samples of `window`.
pub fn classify_movement(window: &GazeWindow, cfg: &GazeConfig) -> Result<Movement> {
    let n = window.samples.len();
    if n < cfg.window {
        return Err(Error::InsufficientData {
            needed: cfg.window,
            got: n,
        });
    }
    Ok(classify_stats(window_stats(&window.samples[n - cfg.window..]), cfg))
}

#[derive(Debug, Clone, Copy)]
struct SteadyRun {
    window_start: u64,
    first_steady_t: u64,
    max_dispersion: f64,
    emitted: bool,
}

/// Result of feeding one sample to the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeUpdate {
    /// `None` until the window has filled.
    pub movement: Option<Movement>,
    /// Set on the sample at which an event qualifies.
    pub event: Option<AttentionEvent>,
    /// True from the qualifying sample until the steady run breaks.
    pub attending: bool,
}

/// Single-stream, causal attention detector.
#[derive(Debug, Clone)]
pub struct AttentionDetector {
    cfg: GazeConfig,
    buf: VecDeque<(u64, [f64; 2])>,
    after_saccade: bool,
    run: Option<SteadyRun>,
}

impl AttentionDetector {
    pub fn new(cfg: GazeConfig) -> Self {
        Self {
            buf: VecDeque::with_capacity(cfg.window + 1),
            cfg,
            after_saccade: false,
            run: None,
        }
    }

    pub fn update(&mut self, t: u64, gaze: [f64; 2]) -> GazeUpdate {
        self.buf.push_back((t, gaze));
        while self.buf.len() > self.cfg.window {
            self.buf.pop_front();
        }
        if self.buf.len() < self.cfg.window {
            return GazeUpdate {
                movement: None,
                event: None,
                attending: false,
            };
        }

        let stats = window_stats(&self.buf);
        let movement = classify_stats(stats, &self.cfg);
        let mut event = None;

        if movement.is_steady() {
            if self.run.is_none() && self.after_saccade {
                self.run = Some(SteadyRun {
                    window_start: self.buf.front().map_or(t, |s| s.0),
                    first_steady_t: t,
                    max_dispersion: 0.0,
                    emitted: false,
                });
                self.after_saccade = false;
            }
            if let Some(run) = self.run.as_mut() {
                run.max_dispersion = run.max_dispersion.max(stats.dispersion);
                if !run.emitted && t.saturating_sub(run.first_steady_t) >= self.cfg.min_duration_ms {
                    run.emitted = true;
                    event = Some(AttentionEvent {
                        t_start: run.window_start,
                        t_end: t,
                        kind: if movement == Movement::Fixation {
                            AttentionKind::Fixation
                        } else {
                            AttentionKind::SmoothPursuit
                        },
                        dispersion: run.max_dispersion,
                    });
                }
            }
        } else {
            self.run = None;
            self.after_saccade = true;
        }

        GazeUpdate {
            movement: Some(movement),
            event,
            attending: self.run.is_some_and(|r| r.emitted),
        }
    }
}

/// Runs a fresh detector over a whole stream of `(t_ms, gaze)` samples.
pub fn detect_attention_events<I>(samples: I, cfg: &GazeConfig) -> Vec<AttentionEvent>
where
    I: IntoIterator<Item = (u64, [f64; 2])>,
{
    let mut det = AttentionDetector::new(cfg.clone());
    samples
        .into_iter()
        .filter_map(|(t, g)| det.update(t, g).event)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(i: usize) -> u64 {
        (i as f64 * 1000.0 / 30.0).round() as u64
    }

    fn saccade_point(i: usize) -> [f64; 2] {
        // alternating far-apart corners, 0.4+ units between frames
        match i % 4 {
            0 => [0.1, 0.1],
            1 => [0.6, 0.2],
            2 => [0.2, 0.7],
            _ => [0.8, 0.8],
        }
    }

    #[test]
    fn stationary_is_fixation() {
        let w = GazeWindow::new((0..10).map(|i| (ts(i), [0.5, 0.5])).collect()).unwrap();
        assert_eq!(classify_movement(&w, &GazeConfig::default()).unwrap(), Movement::Fixation);
    }

    #[test]
    fn jumps_are_saccade() {
        let w = GazeWindow::new((0..10).map(|i| (ts(i), saccade_point(i))).collect()).unwrap();
        assert_eq!(classify_movement(&w, &GazeConfig::default()).unwrap(), Movement::Saccade);
    }

    #[test]
    fn slow_drift_is_smooth_pursuit() {
        // trailing 10 samples: dispersion 9 * 0.002 = 0.018 <= rho_sp,
        // speed 0.018 / 0.3 s = 0.06 units/s, inside (v_fix, v_sp] = (0.03, 0.3]
        let w = GazeWindow::new((0..30).map(|i| (ts(i), [0.3 + 0.002 * i as f64, 0.5])).collect())
            .unwrap();
        let cfg = GazeConfig::default();
        let n = w.samples().len();
        let stats = window_stats(&w.samples()[n - cfg.window..]);
        assert!((stats.dispersion - 0.018).abs() < 1e-12);
        assert!((stats.speed - 0.06).abs() < 1e-3);
        assert_eq!(classify_movement(&w, &cfg).unwrap(), Movement::SmoothPursuit);
    }

    #[test]
    fn short_window_is_insufficient() {
        let w = GazeWindow::new((0..3).map(|i| (ts(i), [0.5, 0.5])).collect()).unwrap();
        assert!(matches!(
            classify_movement(&w, &GazeConfig::default()),
            Err(Error::InsufficientData { needed: 10, got: 3 })
        ));
    }

    #[test]
    fn window_rejects_duplicate_timestamps() {
        assert!(GazeWindow::new(vec![(0, [0.0, 0.0]), (0, [0.1, 0.1])]).is_err());
    }

    #[test]
    fn saccade_then_fixation_gives_one_event() {
        let trace: Vec<_> = (0..30)
            .map(|i| (ts(i), if i < 10 { saccade_point(i) } else { [0.5, 0.5] }))
            .collect();
        let cfg = GazeConfig::default();
        let events = detect_attention_events(trace, &cfg);
        assert_eq!(events.len(), 1);
        let e = events[0];
        assert_eq!(e.kind, AttentionKind::Fixation);
        // first fully steady window covers frames 10..=19; qualifies 200 ms later
        assert_eq!(e.t_start, ts(10));
        assert!(e.t_end >= ts(19) + 200 && e.t_end < ts(19) + 200 + 34);
        assert!(e.t_end - e.t_start >= cfg.min_duration_ms);
        assert!(e.dispersion <= cfg.rho_sp);
    }

    #[test]
    fn stationary_trace_has_no_event() {
        let trace: Vec<_> = (0..60).map(|i| (ts(i), [0.5, 0.5])).collect();
        assert!(detect_attention_events(trace, &GazeConfig::default()).is_empty());
    }

    #[test]
    fn brief_pause_between_saccades_has_no_event() {
        let trace: Vec<_> = (0..32)
            .map(|i| {
                let g = if (10..12).contains(&i) { [0.5, 0.5] } else { saccade_point(i) };
                (ts(i), g)
            })
            .collect();
        assert!(detect_attention_events(trace, &GazeConfig::default()).is_empty());
    }

    #[test]
    fn attending_tracks_the_run() {
        let mut det = AttentionDetector::new(GazeConfig::default());
        let mut attending = Vec::new();
        for i in 0..60 {
            let g = if i < 10 || i >= 45 { saccade_point(i) } else { [0.4, 0.6] };
            attending.push(det.update(ts(i), g).attending);
        }
        let first = attending.iter().position(|a| *a).unwrap();
        assert!(attending[first..45].iter().all(|a| *a));
        assert!(!attending[45]);
    }
}
