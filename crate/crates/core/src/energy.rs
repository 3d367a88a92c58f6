//! Duty-cycle energy model and battery-life estimates.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const MS_PER_HOUR: f64 = 3_600_000.0;

/// Device power draw in watts and battery capacity in watt-hours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerProfile {
    pub p_eye_camera: f64,
    pub p_eye_tracking: f64,
    pub p_world_camera: f64,
    pub p_neye: f64,
    pub battery_wh: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        Self {
            p_eye_camera: 0.07,
            p_eye_tracking: 0.1,
            p_world_camera: 1.3,
            p_neye: 1.1,
            battery_wh: 2.1,
        }
    }
}

/// Parses `key = value` lines into `(line number, key, value)`.
fn key_values(text: &str, origin: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl PowerProfile {
    pub const KEYS: [&'static str; 5] = ["p_eye_camera", "p_eye_tracking", "p_world_camera", "p_neye", "battery_wh"];

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut p = Self::default();
        for (line, k, v) in key_values(text, origin)? {
            let value: f64 = v
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| Error::parse(origin, line, format!("`{v}` is not a non-negative number")))?;
            match k.as_str() {
                "p_eye_camera" => p.p_eye_camera = value,
                "p_eye_tracking" => p.p_eye_tracking = value,
                "p_world_camera" => p.p_world_camera = value,
                "p_neye" => p.p_neye = value,
                "battery_wh" => p.battery_wh = value,
                _ => return Err(Error::parse(origin, line, format!("unknown power key `{k}`"))),
            }
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read(path)?, path)
    }

    pub fn to_text(&self) -> String {
        let values = [
            self.p_eye_camera,
            self.p_eye_tracking,
            self.p_world_camera,
            self.p_neye,
            self.battery_wh,
        ];
        Self::KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Draw of the always-on eye camera and tracker.
    pub fn base_power(&self) -> f64 {
        self.p_eye_camera + self.p_eye_tracking
    }
}

/// Per-stage operation time accumulated during a run, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UsageLedger {
    pub always_on_ms: u64,
    pub neye_ms: u64,
    pub captured_ms: u64,
}

impl UsageLedger {
    pub fn validate(&self) -> Result<()> {
        if self.neye_ms > self.always_on_ms || self.captured_ms > self.always_on_ms {
            return Err(Error::Data(format!(
                "ledger stage times exceed always-on time: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn hours(&self) -> (f64, f64, f64) {
        (
            self.always_on_ms as f64 / MS_PER_HOUR,
            self.neye_ms as f64 / MS_PER_HOUR,
            self.captured_ms as f64 / MS_PER_HOUR,
        )
    }

    /// Fractions of always-on time spent in the eye network and capturing.
    pub fn duties(&self) -> (f64, f64) {
        if self.always_on_ms == 0 {
            return (0.0, 0.0);
        }
        let on = self.always_on_ms as f64;
        (self.neye_ms as f64 / on, self.captured_ms as f64 / on)
    }

    pub fn to_text(&self) -> String {
        format!(
            "t_always_on_ms = {}\nt_neye_ms = {}\nt_captured_ms = {}\n",
            self.always_on_ms, self.neye_ms, self.captured_ms
        )
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut l = Self::default();
        for (line, k, v) in key_values(text, origin)? {
            let value: u64 = v
                .parse()
                .map_err(|_| Error::parse(origin, line, format!("`{v}` is not a millisecond count")))?;
            match k.as_str() {
                "t_always_on_ms" => l.always_on_ms = value,
                "t_neye_ms" => l.neye_ms = value,
                "t_captured_ms" => l.captured_ms = value,
                _ => return Err(Error::parse(origin, line, format!("unknown ledger key `{k}`"))),
            }
        }
        l.validate()?;
        Ok(l)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read(path)?, path)
    }
}

/// Energy in watt-hours consumed over the ledger's operation times.
pub fn energy(ledger: &UsageLedger, profile: &PowerProfile) -> f64 {
    let (on, neye, cap) = ledger.hours();
    on * profile.base_power() + neye * profile.p_neye + cap * profile.p_world_camera
}

fn check_duty(name: &str, d: f64) -> Result<()> {
    if (0.0..=1.0).contains(&d) {
        Ok(())
    } else {
        Err(Error::Input(format!("{name} duty {d} outside [0,1]")))
    }
}

/// Hours of continuous operation; infinite when the average draw is zero.
pub fn battery_life(profile: &PowerProfile, duty_neye: f64, duty_capture: f64) -> Result<f64> {
    check_duty("N_eye", duty_neye)?;
    check_duty("capture", duty_capture)?;
    let power = profile.base_power() + duty_neye * profile.p_neye + duty_capture * profile.p_world_camera;
    Ok(hours_on(profile.battery_wh, power))
}

/// Hours with the eye camera and world camera always on and no eye network.
pub fn record_everything_life(profile: &PowerProfile) -> f64 {
    hours_on(profile.battery_wh, profile.p_eye_camera + profile.p_world_camera)
}

fn hours_on(wh: f64, watts: f64) -> f64 {
    if watts > 0.0 {
        wh / watts
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub duty_neye: f64,
    pub duty_capture: f64,
    pub emoship_h: f64,
    pub record_everything_h: f64,
    pub improvement: f64,
}

pub fn energy_report(profile: &PowerProfile, duty_neye: f64, duty_capture: f64) -> Result<EnergyReport> {
    let emoship_h = battery_life(profile, duty_neye, duty_capture)?;
    let record_everything_h = record_everything_life(profile);
    Ok(EnergyReport {
        duty_neye,
        duty_capture,
        emoship_h,
        record_everything_h,
        improvement: emoship_h / record_everything_h,
    })
}

/// Rounds to one decimal, halves away from zero.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4},{:.1}", round1(x))
    } else {
        "inf,inf".into()
    }
}

impl EnergyReport {
    /// Three scenario rows: EMOShip hours, record-everything hours, ratio.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,value,rounded\n");
        let _ = writeln!(out, "emoship_hours,{}", cell(self.emoship_h));
        let _ = writeln!(out, "record_everything_hours,{}", cell(self.record_everything_h));
        let _ = writeln!(out, "improvement_x,{}", cell(self.improvement));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hours(h: f64) -> u64 {
        (h * MS_PER_HOUR).round() as u64
    }

    #[test]
    fn hour_of_eye_tracking_only() {
        let l = UsageLedger {
            always_on_ms: hours(1.0),
            ..Default::default()
        };
        assert!((energy(&l, &PowerProfile::default()) - 0.17).abs() < 1e-12);
        assert_eq!(energy(&UsageLedger::default(), &PowerProfile::default()), 0.0);
    }

    #[test]
    fn duty_cycled_hour() {
        let l = UsageLedger {
            always_on_ms: hours(1.0),
            neye_ms: hours(0.132),
            captured_ms: hours(0.054),
        };
        assert!((energy(&l, &PowerProfile::default()) - (0.17 + 0.132 * 1.1 + 0.054 * 1.3)).abs() < 1e-12);
    }

    #[test]
    fn battery_examples() {
        let p = PowerProfile::default();
        let r = energy_report(&p, 0.132, 0.054).unwrap();
        assert!((r.emoship_h - 2.1 / 0.3854).abs() < 1e-12);
        assert!((r.record_everything_h - 2.1 / 1.37).abs() < 1e-12);
        assert!((round1(r.improvement) - 3.6).abs() < 1e-9);
        assert!((battery_life(&p, 0.0, 0.0).unwrap() - 2.1 / 0.17).abs() < 1e-12);
        assert!(battery_life(&p, 1.2, 0.0).is_err());
        let off = PowerProfile {
            p_eye_camera: 0.0,
            p_eye_tracking: 0.0,
            ..p
        };
        assert_eq!(battery_life(&off, 0.0, 0.0).unwrap(), f64::INFINITY);
        assert!(energy_report(&off, 0.0, 0.0).unwrap().to_csv().contains("emoship_hours,inf,inf"));
    }

    #[test]
    fn profile_file() {
        let p = PowerProfile::parse("# device\np_neye = 1.1\nbattery_wh=3\n", Path::new("p")).unwrap();
        assert_eq!(p.battery_wh, 3.0);
        assert_eq!(PowerProfile::parse(&p.to_text(), Path::new("p")).unwrap(), p);
        let err = PowerProfile::parse("p_neye = -1\n", Path::new("pp")).unwrap_err();
        assert!(err.to_string().starts_with("pp:1:"));
    }

    #[test]
    fn ledger_file() {
        let l = UsageLedger {
            always_on_ms: 10,
            neye_ms: 4,
            captured_ms: 2,
        };
        assert_eq!(UsageLedger::parse(&l.to_text(), Path::new("l")).unwrap(), l);
        assert!(UsageLedger::parse("t_always_on_ms = 1\nt_neye_ms = 2\n", Path::new("l")).is_err());
    }

    #[test]
    fn life_falls_with_duty() {
        let p = PowerProfile::default();
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let d = f64::from(i) / 10.0;
            let h = battery_life(&p, d, d / 2.0).unwrap();
            assert!(h < last);
            last = h;
        }
    }
}
