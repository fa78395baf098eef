//! Link-level model: log-distance path loss with log-normal shadowing,
//! per-SF gateway sensitivities, the SIR capture threshold matrix and the
//! per-power transmit current draw.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{SpreadingFactor, TxPower};

const SF_COUNT: usize = SpreadingFactor::COUNT;
const TP_COUNT: usize = TxPower::COUNT;

/// Shipped capture thresholds, rows = suffering SF, columns = interfering SF.
pub const SIR_TABLE_CSV: &str = include_str!("../data/sir_thresholds_db.csv");

/// Standard deviation used for the difference of two shadowing terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceSigmaMode {
    /// `2 * sigma`, as in the closed-form capture probability.
    #[default]
    TwoSigma,
    /// `sqrt(2) * sigma`, the standard deviation of `N(0, s) - N(0, s)`.
    Sqrt2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkModel {
    /// Mean path loss at the reference distance, dB.
    pub pl_d0_db: f64,
    pub d0_m: f64,
    /// Path-loss exponent.
    pub gamma: f64,
    /// Shadowing standard deviation, dB.
    pub sigma_db: f64,
    /// Gateway sensitivity for SF7..SF12, dBm.
    pub sensitivity_dbm: [f64; SF_COUNT],
    /// `[suffering SF][interfering SF]`, dB.
    pub sir_threshold_db: [[f64; SF_COUNT]; SF_COUNT],
    /// Power drawn while transmitting at 2, 4, ..., 16 dBm, mW.
    pub tx_power_draw_mw: [f64; TP_COUNT],
    pub difference_sigma_mode: DifferenceSigmaMode,
    /// Multiplier applied to the payload size in the energy-efficiency
    /// numerator; 8 gives bits, 1 keeps the raw byte count.
    pub payload_bits_per_byte: u32,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            pl_d0_db: 98.0729,
            d0_m: 40.0,
            gamma: 2.1495,
            sigma_db: 10.0,
            sensitivity_dbm: [-123.0, -126.0, -129.0, -132.0, -134.5, -137.0],
            sir_threshold_db: default_sir_table(),
            tx_power_draw_mw: [49.5, 52.8, 56.4, 61.7, 70.0, 82.5, 99.0, 125.4],
            difference_sigma_mode: DifferenceSigmaMode::TwoSigma,
            payload_bits_per_byte: 8,
        }
    }
}

/// Parses the shipped threshold table.
pub fn default_sir_table() -> [[f64; SF_COUNT]; SF_COUNT] {
    parse_sir_table(SIR_TABLE_CSV).expect("shipped SIR table is well formed")
}

/// Parses a 6x6 threshold matrix in the shipped CSV layout.
pub fn parse_sir_table(text: &str) -> Result<[[f64; SF_COUNT]; SF_COUNT]> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut table = [[0.0; SF_COUNT]; SF_COUNT];
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        if record.len() != SF_COUNT + 1 {
            return Err(Error::Shape(format!(
                "SIR table row has {} fields",
                record.len()
            )));
        }
        let sf: u8 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Shape(format!("bad SF label {:?}", &record[0])))?;
        let row = SpreadingFactor::new(sf)?.rank();
        for col in 0..SF_COUNT {
            table[row][col] = record[col + 1]
                .trim()
                .parse()
                .map_err(|_| Error::Shape(format!("bad threshold {:?}", &record[col + 1])))?;
        }
        rows += 1;
    }
    if rows != SF_COUNT {
        return Err(Error::Shape(format!("SIR table has {rows} rows")));
    }
    Ok(table)
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("d0_m", self.d0_m)?;
        positive("gamma", self.gamma)?;
        positive("sigma_db", self.sigma_db)?;
        if !self.pl_d0_db.is_finite() {
            return Err(Error::InvalidConfig("pl_d0_db must be finite".into()));
        }
        for (k, row) in self.sir_threshold_db.iter().enumerate() {
            if row[k] != 6.0 {
                return Err(Error::InvalidConfig(format!(
                    "co-SF capture threshold for SF{} must be 6 dB, got {}",
                    k + 7,
                    row[k]
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("SIR thresholds must be finite".into()));
            }
        }
        if !self.sensitivity_dbm.windows(2).all(|w| w[1] < w[0]) {
            return Err(Error::InvalidConfig(
                "sensitivity_dbm must be strictly decreasing in SF".into(),
            ));
        }
        if !self.tx_power_draw_mw.windows(2).all(|w| w[1] > w[0]) || self.tx_power_draw_mw[0] <= 0.0
        {
            return Err(Error::InvalidConfig(
                "tx_power_draw_mw must be positive and strictly increasing in TP".into(),
            ));
        }
        if self.payload_bits_per_byte == 0 {
            return Err(Error::InvalidConfig("payload_bits_per_byte must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sensitivity(&self, sf: SpreadingFactor) -> f64 {
        self.sensitivity_dbm[sf.rank()]
    }

    pub fn sir_threshold(&self, suffering: SpreadingFactor, interfering: SpreadingFactor) -> f64 {
        self.sir_threshold_db[suffering.rank()][interfering.rank()]
    }

    pub fn power_draw_mw(&self, tp: TxPower) -> f64 {
        self.tx_power_draw_mw[tp.rank()]
    }

    /// Deterministic part of the path loss at distance `d_m`, dB.
    pub fn mean_path_loss_db(&self, d_m: f64) -> f64 {
        self.pl_d0_db + 10.0 * self.gamma * (d_m / self.d0_m).log10()
    }

    /// Standard deviation of `N_jk - N_ik` used by the capture probability.
    pub fn difference_sigma_db(&self) -> f64 {
        match self.difference_sigma_mode {
            DifferenceSigmaMode::TwoSigma => 2.0 * self.sigma_db,
            DifferenceSigmaMode::Sqrt2 => std::f64::consts::SQRT_2 * self.sigma_db,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sf(v: u8) -> SpreadingFactor {
        SpreadingFactor::new(v).unwrap()
    }

    #[test]
    fn shipped_table_matches_known_entries() {
        let link = LinkModel::default();
        link.validate().unwrap();
        assert_eq!(link.sir_threshold(sf(8), sf(10)), -12.0);
        assert_eq!(link.sir_threshold(sf(7), sf(8)), -8.0);
        assert_eq!(link.sir_threshold(sf(12), sf(7)), -25.0);
        assert_eq!(link.sir_threshold(sf(11), sf(12)), -20.0);
        for s in SpreadingFactor::all() {
            assert_eq!(link.sir_threshold(s, s), 6.0);
        }
    }

    #[test]
    fn malformed_tables_rejected() {
        assert!(parse_sir_table("sf,7\n7,6\n").is_err());
        let mut short = SIR_TABLE_CSV.lines().collect::<Vec<_>>();
        short.pop();
        assert!(parse_sir_table(&short.join("\n")).is_err());
    }

    #[test]
    fn validation_catches_broken_invariants() {
        let mut link = LinkModel::default();
        link.sir_threshold_db[2][2] = 5.0;
        assert!(link.validate().is_err());

        let mut link = LinkModel::default();
        link.sensitivity_dbm[3] = -120.0;
        assert!(link.validate().is_err());

        let mut link = LinkModel::default();
        link.tx_power_draw_mw[7] = 1.0;
        assert!(link.validate().is_err());

        let link = LinkModel {
            sigma_db: 0.0,
            ..LinkModel::default()
        };
        assert!(link.validate().is_err());
    }

    #[test]
    fn difference_sigma() {
        let mut link = LinkModel::default();
        assert_eq!(link.difference_sigma_db(), 20.0);
        link.difference_sigma_mode = DifferenceSigmaMode::Sqrt2;
        assert!((link.difference_sigma_db() - 14.142135623730951).abs() < 1e-12);
    }
}
