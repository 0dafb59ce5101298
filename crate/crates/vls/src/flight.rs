//! Scanner settings and parallel flight-strip planning.

use damagescan_core::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Airborne line scanner on a platform flying at constant speed and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScannerConfig {
    /// Scan lines per second.
    pub scan_rate_hz: f64,
    /// Pulses per second.
    pub pulse_rate_hz: f64,
    /// Fraction of the swath shared by neighbouring strips.
    pub strip_overlap: f64,
    /// Full across-track field of view, degrees.
    pub fov_deg: f64,
    /// Flying height above ground, meters.
    pub altitude_m: f64,
    pub speed_mps: f64,
    /// Standard deviation of the range error along each ray, meters.
    pub range_noise_sigma_m: f64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        Self {
            scan_rate_hz: 89.0,
            pulse_rate_hz: 300_000.0,
            strip_overlap: 0.6,
            fov_deg: 120.0,
            altitude_m: 100.0,
            speed_mps: 8.0,
            range_noise_sigma_m: 0.02,
        }
    }
}

impl ScannerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("scan_rate_hz", self.scan_rate_hz),
            ("pulse_rate_hz", self.pulse_rate_hz),
            ("altitude_m", self.altitude_m),
            ("speed_mps", self.speed_mps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidScanner(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidScanner(format!(
                "fov_deg must lie in (0, 180), got {}",
                self.fov_deg
            )));
        }
        if !(self.range_noise_sigma_m >= 0.0 && self.range_noise_sigma_m.is_finite()) {
            return Err(Error::InvalidScanner(
                "range_noise_sigma_m must be non-negative".into(),
            ));
        }
        if !(0.0..=0.95).contains(&self.strip_overlap) {
            return Err(Error::InvalidOverlap(self.strip_overlap));
        }
        if self.pulses_per_line() < 2 {
            return Err(Error::InvalidScanner(
                "fewer than two pulses per scan line".into(),
            ));
        }
        Ok(())
    }

    /// Nadir swath width `2 h tan(fov / 2)`.
    pub fn swath_width(&self) -> f64 {
        2.0 * self.altitude_m * (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Distance between neighbouring strip centre lines.
    pub fn strip_spacing(&self) -> f64 {
        self.swath_width() * (1.0 - self.strip_overlap)
    }

    /// Along-track distance between consecutive scan lines.
    pub fn line_spacing(&self) -> f64 {
        self.speed_mps / self.scan_rate_hz
    }

    pub fn pulses_per_line(&self) -> usize {
        (self.pulse_rate_hz / self.scan_rate_hz).round() as usize
    }
}

/// One straight flight line at constant height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightStrip {
    pub index: usize,
    pub start: Point3,
    pub end: Point3,
    /// Compass-style heading in degrees, 0 = +y (north), 90 = +x (east).
    pub heading_deg: f64,
}

impl FlightStrip {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }
}

/// Planimetric rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent2 {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Extent2 {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    pub fn expanded(&self, margin: f64) -> Extent2 {
        Extent2 {
            min: [self.min[0] - margin, self.min[1] - margin],
            max: [self.max[0] + margin, self.max[1] + margin],
        }
    }
}

/// Along-track run-in before and after the extent, meters.
pub const RUN_IN_M: f64 = 5.0;

/// Parallel north–south strips, alternating direction, centred on `extent`.
///
/// One strip suffices when the extent is no wider than the swath; otherwise
/// strips are added at the overlap spacing until the outer swath edges cover
/// the extent.
pub fn plan_strips(extent: &Extent2, cfg: &ScannerConfig) -> Result<Vec<FlightStrip>> {
    if !(cfg.strip_overlap < 1.0) {
        return Err(Error::InvalidOverlap(cfg.strip_overlap));
    }
    cfg.validate()?;
    let w = cfg.swath_width();
    let s = cfg.strip_spacing();
    let width = extent.width().max(0.0);
    let n = if width <= w {
        1
    } else {
        1 + ((width - w) / s).ceil() as usize
    };
    let cx = (extent.min[0] + extent.max[0]) / 2.0;
    let first = cx - (n - 1) as f64 * s / 2.0;
    let y0 = extent.min[1] - RUN_IN_M;
    let y1 = extent.max[1] + RUN_IN_M;
    let h = cfg.altitude_m;
    Ok((0..n)
        .map(|i| {
            let x = first + i as f64 * s;
            let (a, b, heading) = if i % 2 == 0 {
                (y0, y1, 0.0)
            } else {
                (y1, y0, 180.0)
            };
            FlightStrip {
                index: i,
                start: Point3::new(x, a, h),
                end: Point3::new(x, b, h),
                heading_deg: heading,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_swath() {
        let c = ScannerConfig::default();
        let w = 2.0 * 100.0 * 3f64.sqrt();
        assert!((c.swath_width() - w).abs() < 1e-9);
        assert!((c.strip_spacing() - 0.4 * w).abs() < 1e-9);
        assert_eq!(c.pulses_per_line(), 3371);
    }

    #[test]
    fn narrow_extent_single_strip() {
        let e = Extent2::new([0.0, 0.0], [100.0, 50.0]);
        let s = plan_strips(&e, &ScannerConfig::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].start.x, 50.0);
    }

    #[test]
    fn wide_extent_covered() {
        let cfg = ScannerConfig::default();
        let e = Extent2::new([0.0, 0.0], [1000.0, 10.0]);
        let s = plan_strips(&e, &cfg).unwrap();
        let half = cfg.swath_width() / 2.0;
        assert!(s.first().unwrap().start.x - half <= 0.0);
        assert!(s.last().unwrap().start.x + half >= 1000.0);
        assert_eq!(s[1].heading_deg, 180.0);
    }

    #[test]
    fn overlap_bounds() {
        let e = Extent2::new([0.0, 0.0], [10.0, 10.0]);
        for o in [1.0, 1.2, -0.1, 0.96] {
            let cfg = ScannerConfig {
                strip_overlap: o,
                ..Default::default()
            };
            assert!(matches!(
                plan_strips(&e, &cfg),
                Err(Error::InvalidOverlap(_))
            ));
        }
    }
}
