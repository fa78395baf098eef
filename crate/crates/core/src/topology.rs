use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// End-device and gateway placement plus the channel plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub ed_positions: Vec<Point>,
    pub gw_positions: Vec<Point>,
    /// Channel of each end device, `1..=num_channels`.
    pub channel_of_ed: Vec<u32>,
    pub num_channels: u32,
    /// Side of the square deployment area `[0, side] x [0, side]`, metres.
    pub area_side_m: f64,
}

impl NetworkTopology {
    /// Every end device on channel 1.
    pub fn single_channel(ed_positions: Vec<Point>, gw_positions: Vec<Point>, area_side_m: f64) -> Self {
        let n = ed_positions.len();
        NetworkTopology {
            ed_positions,
            gw_positions,
            channel_of_ed: vec![1; n],
            num_channels: 1,
            area_side_m,
        }
    }

    /// `n` end devices uniform over the square, gateways at the given points,
    /// channels assigned round-robin.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_eds: usize,
        gw_positions: Vec<Point>,
        num_channels: u32,
        area_side_m: f64,
    ) -> Self {
        let ed_positions = (0..num_eds)
            .map(|_| Point::new(rng.random::<f64>() * area_side_m, rng.random::<f64>() * area_side_m))
            .collect();
        let channel_of_ed = (0..num_eds)
            .map(|i| (i as u32 % num_channels.max(1)) + 1)
            .collect();
        NetworkTopology {
            ed_positions,
            gw_positions,
            channel_of_ed,
            num_channels,
            area_side_m,
        }
    }

    pub fn num_eds(&self) -> usize {
        self.ed_positions.len()
    }

    pub fn num_gateways(&self) -> usize {
        self.gw_positions.len()
    }

    pub fn distance(&self, ed: usize, gw: usize) -> f64 {
        self.ed_positions[ed].distance(&self.gw_positions[gw])
    }

    /// Index of the closest gateway (lowest index on ties).
    pub fn nearest_gateway(&self, ed: usize) -> usize {
        (0..self.num_gateways())
            .min_by(|&a, &b| self.distance(ed, a).total_cmp(&self.distance(ed, b)))
            .expect("at least one gateway")
    }

    pub fn same_channel(&self, a: usize, b: usize) -> bool {
        self.channel_of_ed[a] == self.channel_of_ed[b]
    }

    pub fn validate(&self) -> Result<()> {
        if self.gw_positions.is_empty() {
            return Err(Error::InvalidConfig("topology needs at least one gateway".into()));
        }
        if self.num_channels < 1 {
            return Err(Error::InvalidConfig("topology needs at least one channel".into()));
        }
        if self.channel_of_ed.len() != self.ed_positions.len() {
            return Err(Error::LengthMismatch {
                expected: self.ed_positions.len(),
                actual: self.channel_of_ed.len(),
            });
        }
        if let Some(c) = self.channel_of_ed.iter().find(|&&c| c < 1 || c > self.num_channels) {
            return Err(Error::InvalidConfig(format!(
                "channel {c} outside 1..={}",
                self.num_channels
            )));
        }
        let inside = |p: &Point| {
            p.x.is_finite()
                && p.y.is_finite()
                && (0.0..=self.area_side_m).contains(&p.x)
                && (0.0..=self.area_side_m).contains(&p.y)
        };
        if let Some(i) = self.ed_positions.iter().position(|p| !inside(p)) {
            return Err(Error::InvalidConfig(format!(
                "end device {i} lies outside the {} m deployment area",
                self.area_side_m
            )));
        }
        if self.gw_positions.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidConfig("gateway positions must be finite".into()));
        }
        for i in 0..self.num_eds() {
            for k in 0..self.num_gateways() {
                if self.distance(i, k) == 0.0 {
                    return Err(Error::ColocatedGateway { ed: i, gw: k });
                }
            }
        }
        Ok(())
    }
}

/// `rows x rows` gateway grid at the cell centres of the square, e.g. the
/// quarter points for `rows = 2`.
pub fn grid_gateways(rows: usize, area_side_m: f64) -> Vec<Point> {
    let step = area_side_m / rows as f64;
    let mut out = Vec::with_capacity(rows * rows);
    for r in 0..rows {
        for c in 0..rows {
            out.push(Point::new((c as f64 + 0.5) * step, (r as f64 + 0.5) * step));
        }
    }
    out
}
