//! LoRa PHY/MAC timing: symbol duration, payload symbol count, time-on-air,
//! the ALOHA vulnerable window and the pairwise interference probability.
//!
//! All durations are seconds in `f64`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum duty cycle allowed in the EU868 sub-band used for uplinks.
pub const MAX_DUTY_CYCLE: f64 = 0.01;

/// Preamble symbols that must survive for the packet to lock; the first
/// `n_pr - 5` preamble symbols may be corrupted.
pub const PROTECTED_PREAMBLE_SYMBOLS: u32 = 5;

/// A LoRa spreading factor in `7..=12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SpreadingFactor(u8);

impl SpreadingFactor {
    pub const MIN: SpreadingFactor = SpreadingFactor(7);
    pub const MAX: SpreadingFactor = SpreadingFactor(12);
    pub const COUNT: usize = 6;

    pub fn new(value: u8) -> Result<Self> {
        if (7..=12).contains(&value) {
            Ok(SpreadingFactor(value))
        } else {
            Err(Error::InvalidSpreadingFactor(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Position in `7..=12`, i.e. `0` for SF7.
    pub fn rank(self) -> usize {
        (self.0 - 7) as usize
    }

    pub fn from_rank(rank: usize) -> Result<Self> {
        if rank < Self::COUNT {
            Ok(SpreadingFactor(7 + rank as u8))
        } else {
            Err(Error::InvalidSpreadingFactor(rank.min(250) as u8 + 7))
        }
    }

    pub fn all() -> impl Iterator<Item = SpreadingFactor> {
        (7..=12).map(SpreadingFactor)
    }
}

impl TryFrom<u8> for SpreadingFactor {
    type Error = Error;
    fn try_from(value: u8) -> Result<Self> {
        SpreadingFactor::new(value)
    }
}

impl From<SpreadingFactor> for u8 {
    fn from(sf: SpreadingFactor) -> u8 {
        sf.0
    }
}

impl fmt::Display for SpreadingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SF{}", self.0)
    }
}

/// A transmission power level in dBm, one of `2, 4, ..., 16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct TxPower(i32);

impl TxPower {
    pub const MIN: TxPower = TxPower(2);
    pub const MAX: TxPower = TxPower(16);
    pub const COUNT: usize = 8;

    pub fn new(dbm: i32) -> Result<Self> {
        if (2..=16).contains(&dbm) && dbm % 2 == 0 {
            Ok(TxPower(dbm))
        } else {
            Err(Error::InvalidTxPower(dbm))
        }
    }

    pub fn dbm(self) -> i32 {
        self.0
    }

    /// Position in `2, 4, ..., 16`, i.e. `0` for 2 dBm.
    pub fn rank(self) -> usize {
        ((self.0 - 2) / 2) as usize
    }

    pub fn from_rank(rank: usize) -> Result<Self> {
        if rank < Self::COUNT {
            Ok(TxPower(2 + 2 * rank as i32))
        } else {
            Err(Error::InvalidTxPower(2 + 2 * rank.min(1000) as i32))
        }
    }

    pub fn all() -> impl Iterator<Item = TxPower> {
        (1..=8).map(|k| TxPower(2 * k))
    }
}

impl TryFrom<i32> for TxPower {
    type Error = Error;
    fn try_from(value: i32) -> Result<Self> {
        TxPower::new(value)
    }
}

impl From<TxPower> for i32 {
    fn from(tp: TxPower) -> i32 {
        tp.0
    }
}

impl fmt::Display for TxPower {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} dBm", self.0)
    }
}

/// Physical-layer and traffic parameters shared by every end device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhyConfig {
    pub bandwidth_hz: f64,
    pub payload_bytes: u32,
    /// `CR` in `1..=4`, i.e. coding rate `4 / (4 + CR)`.
    pub coding_rate_index: u32,
    pub preamble_symbols: u32,
    /// Spreading factors that run with low-data-rate optimisation (`DE = 1`).
    pub low_data_rate_sfs: Vec<u8>,
    /// Poisson packet generation rate per end device, packets per second.
    pub traffic_rate_hz: f64,
}

impl Default for PhyConfig {
    fn default() -> Self {
        PhyConfig {
            bandwidth_hz: 125_000.0,
            payload_bytes: 20,
            coding_rate_index: 1,
            preamble_symbols: 8,
            low_data_rate_sfs: vec![11, 12],
            traffic_rate_hz: 0.01,
        }
    }
}

impl PhyConfig {
    /// Checks hard invariants and returns soft warnings (duty-cycle overruns).
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth_hz must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if self.payload_bytes < 1 {
            return Err(Error::InvalidConfig("payload_bytes must be >= 1".into()));
        }
        if !(1..=4).contains(&self.coding_rate_index) {
            return Err(Error::InvalidConfig(format!(
                "coding_rate_index must be in 1..=4, got {}",
                self.coding_rate_index
            )));
        }
        if self.preamble_symbols <= PROTECTED_PREAMBLE_SYMBOLS {
            return Err(Error::InvalidConfig(format!(
                "preamble_symbols must be >= 6, got {}",
                self.preamble_symbols
            )));
        }
        for &sf in &self.low_data_rate_sfs {
            SpreadingFactor::new(sf)?;
        }
        if !(self.traffic_rate_hz.is_finite() && self.traffic_rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "traffic_rate_hz must be positive, got {}",
                self.traffic_rate_hz
            )));
        }
        let mut warnings = Vec::new();
        for sf in SpreadingFactor::all() {
            let duty = time_on_air(sf, self) * self.traffic_rate_hz;
            if duty > MAX_DUTY_CYCLE {
                warnings.push(format!(
                    "{sf}: duty cycle {:.4} exceeds {MAX_DUTY_CYCLE}",
                    duty
                ));
            }
        }
        Ok(warnings)
    }

    /// Low-data-rate optimisation flag `DE` for the given spreading factor.
    pub fn low_data_rate(&self, sf: SpreadingFactor) -> u32 {
        u32::from(self.low_data_rate_sfs.contains(&sf.value()))
    }
}

/// `2^SF / B`.
pub fn symbol_duration(sf: SpreadingFactor, cfg: &PhyConfig) -> f64 {
    f64::from(1u32 << sf.value()) / cfg.bandwidth_hz
}

/// Number of payload symbols, header and CRC included. Always `>= 8`.
pub fn payload_symbols(sf: SpreadingFactor, cfg: &PhyConfig) -> u32 {
    let f = i64::from(sf.value());
    let numerator = 8 * i64::from(cfg.payload_bytes) - 4 * f + 28 + 16;
    let denominator = 4 * (f - 2 * i64::from(cfg.low_data_rate(sf)));
    let blocks = if numerator <= 0 {
        0
    } else {
        // ceil for positive operands
        (numerator + denominator - 1) / denominator
    };
    let coded = blocks * (i64::from(cfg.coding_rate_index) + 4);
    8 + coded.max(0) as u32
}

/// Preamble duration `(n_pr + 4.25) * T_sym`.
pub fn preamble_duration(sf: SpreadingFactor, cfg: &PhyConfig) -> f64 {
    (f64::from(cfg.preamble_symbols) + 4.25) * symbol_duration(sf, cfg)
}

/// Packet airtime, preamble plus payload.
///
/// Evaluated as one exact quarter-symbol count times `2^SF` divided by the
/// bandwidth, so the result is the correctly rounded value of the rational
/// airtime.
pub fn time_on_air(sf: SpreadingFactor, cfg: &PhyConfig) -> f64 {
    let symbols = f64::from(cfg.preamble_symbols) + 4.25 + f64::from(payload_symbols(sf, cfg));
    symbols * f64::from(1u32 << sf.value()) / cfg.bandwidth_hz
}

/// Interval during which a transmission start by `j` corrupts the protected
/// part of `i`'s packet: `T_j + T_i - (n_pr - 5) * T_sym(f_i)`.
pub fn vulnerable_window(sf_i: SpreadingFactor, sf_j: SpreadingFactor, cfg: &PhyConfig) -> f64 {
    let unprotected = f64::from(cfg.preamble_symbols - PROTECTED_PREAMBLE_SYMBOLS);
    time_on_air(sf_j, cfg) + time_on_air(sf_i, cfg) - unprotected * symbol_duration(sf_i, cfg)
}

/// Probability that a Poisson source of rate `lambda` starts a packet inside
/// a window of the given length.
pub fn poisson_hit_probability(rate_hz: f64, window_s: f64) -> f64 {
    -(-rate_hz * window_s).exp_m1()
}

/// Probability that end device `j` (on `sf_j`) interferes with `i` (on `sf_i`).
pub fn interference_probability(
    sf_i: SpreadingFactor,
    sf_j: SpreadingFactor,
    cfg: &PhyConfig,
) -> f64 {
    poisson_hit_probability(cfg.traffic_rate_hz, vulnerable_window(sf_i, sf_j, cfg))
}

/// Precomputed per-SF airtimes and the 6x6 pairwise interference matrix.
#[derive(Debug, Clone)]
pub struct TimingTable {
    pub airtime_s: [f64; SpreadingFactor::COUNT],
    pub symbol_s: [f64; SpreadingFactor::COUNT],
    /// `[suffering][interfering]`.
    pub interference: [[f64; SpreadingFactor::COUNT]; SpreadingFactor::COUNT],
}

impl TimingTable {
    pub fn new(cfg: &PhyConfig) -> Self {
        let mut airtime_s = [0.0; SpreadingFactor::COUNT];
        let mut symbol_s = [0.0; SpreadingFactor::COUNT];
        let mut interference = [[0.0; SpreadingFactor::COUNT]; SpreadingFactor::COUNT];
        for sf_i in SpreadingFactor::all() {
            airtime_s[sf_i.rank()] = time_on_air(sf_i, cfg);
            symbol_s[sf_i.rank()] = symbol_duration(sf_i, cfg);
            for sf_j in SpreadingFactor::all() {
                interference[sf_i.rank()][sf_j.rank()] = interference_probability(sf_i, sf_j, cfg);
            }
        }
        TimingTable {
            airtime_s,
            symbol_s,
            interference,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sf(v: u8) -> SpreadingFactor {
        SpreadingFactor::new(v).unwrap()
    }

    #[test]
    fn symbol_duration_examples() {
        let cfg = PhyConfig::default();
        assert!((symbol_duration(sf(7), &cfg) - 1.024e-3).abs() < 1e-15);
        assert!((symbol_duration(sf(12), &cfg) - 32.768e-3).abs() < 1e-15);
        let wide = PhyConfig {
            bandwidth_hz: 250_000.0,
            ..PhyConfig::default()
        };
        assert!((symbol_duration(sf(7), &wide) - 0.512e-3).abs() < 1e-15);
        for v in 7..12 {
            assert_eq!(
                symbol_duration(sf(v + 1), &cfg),
                2.0 * symbol_duration(sf(v), &cfg)
            );
        }
    }

    #[test]
    fn payload_symbol_examples() {
        let cfg = PhyConfig {
            low_data_rate_sfs: vec![],
            ..PhyConfig::default()
        };
        assert_eq!(payload_symbols(sf(7), &cfg), 43);
        let de = PhyConfig {
            low_data_rate_sfs: vec![12],
            ..PhyConfig::default()
        };
        assert_eq!(payload_symbols(sf(12), &de), 28);
    }

    #[test]
    fn airtime_examples() {
        let cfg = PhyConfig::default();
        assert!((preamble_duration(sf(7), &cfg) - 12.544e-3).abs() < 1e-15);
        assert!((time_on_air(sf(7), &cfg) - 56.576e-3).abs() < 1e-15);
        assert!(time_on_air(sf(8), &cfg) > time_on_air(sf(7), &cfg));
    }

    #[test]
    fn vulnerable_window_examples() {
        let cfg = PhyConfig::default();
        let w = vulnerable_window(sf(7), sf(7), &cfg);
        assert!((w - 110.08e-3).abs() < 1e-12);

        // n_pr = 5 is not a valid config but the correction term vanishes there
        let t7 = time_on_air(sf(7), &cfg);
        let no_correction = 2.0 * t7 - 0.0 * symbol_duration(sf(7), &cfg);
        assert!((w + 3.0 * symbol_duration(sf(7), &cfg) - no_correction).abs() < 1e-15);

        let cross = vulnerable_window(sf(7), sf(12), &cfg);
        assert!(cross > time_on_air(sf(12), &cfg));
        assert_ne!(cross, vulnerable_window(sf(12), sf(7), &cfg));
    }

    #[test]
    fn interference_probability_examples() {
        let cfg = PhyConfig::default();
        let h = interference_probability(sf(7), sf(7), &cfg);
        assert!((h - (1.0 - (-0.0011008f64).exp())).abs() < 1e-15);
        assert!((h - 1.1002e-3).abs() < 1e-7);

        let slow = PhyConfig {
            traffic_rate_hz: 1e-12,
            ..PhyConfig::default()
        };
        assert!(interference_probability(sf(7), sf(7), &slow) < 1e-12);
        let busy = PhyConfig {
            traffic_rate_hz: 1e6,
            ..PhyConfig::default()
        };
        assert!(interference_probability(sf(7), sf(7), &busy) > 1.0 - 1e-12);
    }

    #[test]
    fn validation() {
        assert!(PhyConfig::default().validate().is_ok());
        let warnings = PhyConfig::default().validate().unwrap();
        // SF12 at 20 bytes and 0.01 pkt/s exceeds the 1% duty cycle
        assert!(warnings.iter().any(|w| w.starts_with("SF12")));
        assert!(!warnings.iter().any(|w| w.starts_with("SF7")));

        let bad = PhyConfig {
            preamble_symbols: 5,
            ..PhyConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PhyConfig {
            coding_rate_index: 5,
            ..PhyConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SpreadingFactor::new(6).is_err());
        assert!(TxPower::new(3).is_err());
        assert!(TxPower::new(18).is_err());
    }

    #[test]
    fn ranks_round_trip() {
        for (k, s) in SpreadingFactor::all().enumerate() {
            assert_eq!(s.rank(), k);
            assert_eq!(SpreadingFactor::from_rank(k).unwrap(), s);
        }
        for (k, p) in TxPower::all().enumerate() {
            assert_eq!(p.rank(), k);
            assert_eq!(TxPower::from_rank(k).unwrap(), p);
        }
    }

    proptest! {
        #[test]
        fn payload_symbols_at_least_eight(l in 1u32..=255, s in 7u8..=12, cr in 1u32..=4) {
            let cfg = PhyConfig { payload_bytes: l, coding_rate_index: cr, ..PhyConfig::default() };
            prop_assert!(payload_symbols(sf(s), &cfg) >= 8);
        }

        #[test]
        fn airtime_monotone_in_payload(l in 1u32..255, s in 7u8..=12, cr in 1u32..=4) {
            let a = PhyConfig { payload_bytes: l, coding_rate_index: cr, ..PhyConfig::default() };
            let b = PhyConfig { payload_bytes: l + 1, ..a.clone() };
            prop_assert!(time_on_air(sf(s), &a) > 0.0);
            prop_assert!(time_on_air(sf(s), &b) >= time_on_air(sf(s), &a));
            prop_assert!(vulnerable_window(sf(s), sf(7), &b) >= vulnerable_window(sf(s), sf(7), &a));
            prop_assert!(vulnerable_window(sf(s), sf(7), &a) > 0.0);
        }

        #[test]
        fn interference_probability_monotone(rate in 1e-4f64..1.0, factor in 1.01f64..10.0, s in 7u8..=12) {
            let lo = PhyConfig { traffic_rate_hz: rate, ..PhyConfig::default() };
            let hi = PhyConfig { traffic_rate_hz: rate * factor, ..PhyConfig::default() };
            let p_lo = interference_probability(sf(s), sf(7), &lo);
            let p_hi = interference_probability(sf(s), sf(7), &hi);
            prop_assert!(p_lo > 0.0 && p_lo < 1.0);
            prop_assert!(p_hi > p_lo);
            // longer window at the same rate
            prop_assert!(interference_probability(sf(s), sf(12), &lo) > interference_probability(sf(s), sf(7), &lo));
        }
    }
}
