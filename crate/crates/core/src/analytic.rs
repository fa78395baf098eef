//! Closed-form packet delivery rate and energy efficiency of an SF/TP
//! assignment.
//!
//! Per gateway `k`, the delivery probability of end device `i` is the
//! product of the probability that its signal clears the gateway
//! sensitivity under log-normal shadowing and the probability that no
//! overlapping transmission on the same channel defeats the capture
//! threshold. Gateways are combined as independent receivers, and energy
//! efficiency charges `1 / PDR` expected transmissions per delivered packet.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkModel;
use crate::radio::{PhyConfig, SpreadingFactor, TimingTable, TxPower};
use crate::special::gaussian_cdf;
use crate::topology::NetworkTopology;

/// Number of joint (SF, TP) choices per end device.
pub const ACTIONS_PER_ED: usize = SpreadingFactor::COUNT * TxPower::COUNT;

/// One (SF, TP) pair per end device.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub sf: Vec<SpreadingFactor>,
    pub tp: Vec<TxPower>,
}

impl Assignment {
    pub fn uniform(n: usize, sf: SpreadingFactor, tp: TxPower) -> Self {
        Assignment {
            sf: vec![sf; n],
            tp: vec![tp; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sf.is_empty()
    }

    /// Builds an assignment from flat action indices `sf_rank * 8 + tp_rank`.
    pub fn from_actions(actions: &[usize]) -> Result<Self> {
        let mut sf = Vec::with_capacity(actions.len());
        let mut tp = Vec::with_capacity(actions.len());
        for &a in actions {
            let (s, p) = decode_action(a)?;
            sf.push(s);
            tp.push(p);
        }
        Ok(Assignment { sf, tp })
    }

    pub fn actions(&self) -> Vec<usize> {
        self.sf
            .iter()
            .zip(&self.tp)
            .map(|(&s, &p)| encode_action(s, p))
            .collect()
    }

    pub fn validate(&self, num_eds: usize) -> Result<()> {
        if self.sf.len() != num_eds {
            return Err(Error::LengthMismatch {
                expected: num_eds,
                actual: self.sf.len(),
            });
        }
        if self.tp.len() != num_eds {
            return Err(Error::LengthMismatch {
                expected: num_eds,
                actual: self.tp.len(),
            });
        }
        Ok(())
    }
}

pub fn encode_action(sf: SpreadingFactor, tp: TxPower) -> usize {
    sf.rank() * TxPower::COUNT + tp.rank()
}

pub fn decode_action(index: usize) -> Result<(SpreadingFactor, TxPower)> {
    if index >= ACTIONS_PER_ED {
        return Err(Error::InvalidAction(index));
    }
    Ok((
        SpreadingFactor::from_rank(index / TxPower::COUNT)?,
        TxPower::from_rank(index % TxPower::COUNT)?,
    ))
}

/// Per-device and system delivery/efficiency figures of one assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EeReport {
    pub pdr_per_ed: Vec<f64>,
    /// bits per mJ
    pub ee_per_ed: Vec<f64>,
    pub system_ee: f64,
    pub feasible_per_ed: Vec<bool>,
    pub pdr_threshold: f64,
}

impl EeReport {
    pub fn num_eds(&self) -> usize {
        self.pdr_per_ed.len()
    }

    pub fn mean_pdr(&self) -> f64 {
        if self.pdr_per_ed.is_empty() {
            return 0.0;
        }
        self.pdr_per_ed.iter().sum::<f64>() / self.pdr_per_ed.len() as f64
    }

    pub fn feasible_fraction(&self) -> f64 {
        if self.feasible_per_ed.is_empty() {
            return 1.0;
        }
        self.feasible_per_ed.iter().filter(|&&f| f).count() as f64 / self.feasible_per_ed.len() as f64
    }

    pub fn min_ee(&self) -> f64 {
        self.ee_per_ed.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Topology, PHY and link parameters with precomputed distances and timing.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub topology: NetworkTopology,
    pub phy: PhyConfig,
    pub link: LinkModel,
    timing: TimingTable,
    /// `[ed][gw]` mean path loss, dB.
    path_loss_db: Vec<Vec<f64>>,
}

impl NetworkModel {
    pub fn new(topology: NetworkTopology, phy: PhyConfig, link: LinkModel) -> Result<Self> {
        topology.validate()?;
        phy.validate()?;
        link.validate()?;
        let timing = TimingTable::new(&phy);
        let path_loss_db = (0..topology.num_eds())
            .map(|i| {
                (0..topology.num_gateways())
                    .map(|k| link.mean_path_loss_db(topology.distance(i, k)))
                    .collect()
            })
            .collect();
        Ok(NetworkModel {
            topology,
            phy,
            link,
            timing,
            path_loss_db,
        })
    }

    pub fn num_eds(&self) -> usize {
        self.topology.num_eds()
    }

    pub fn num_gateways(&self) -> usize {
        self.topology.num_gateways()
    }

    pub fn timing(&self) -> &TimingTable {
        &self.timing
    }

    pub fn airtime(&self, sf: SpreadingFactor) -> f64 {
        self.timing.airtime_s[sf.rank()]
    }

    pub fn path_loss_db(&self, ed: usize, gw: usize) -> f64 {
        self.path_loss_db[ed][gw]
    }

    /// Mean received signal strength `z_ik` at TP `tp`, dBm.
    pub fn mean_rss_at(&self, ed: usize, gw: usize, tp: TxPower) -> f64 {
        f64::from(tp.dbm()) - self.path_loss_db[ed][gw]
    }

    /// Mean received signal strength `z_ik` under `assignment`, dBm.
    pub fn mean_rss_dbm(&self, ed: usize, gw: usize, assignment: &Assignment) -> f64 {
        self.mean_rss_at(ed, gw, assignment.tp[ed])
    }

    /// Probability that the shadowed RSS clears the gateway sensitivity.
    pub fn reception_probability(&self, ed: usize, gw: usize, assignment: &Assignment) -> f64 {
        let margin = self.mean_rss_dbm(ed, gw, assignment) - self.link.sensitivity(assignment.sf[ed]);
        gaussian_cdf(margin, self.link.sigma_db)
    }

    /// `P(RSS_ik - RSS_jk < omega_{f_i f_j})`: an overlapping packet from
    /// `ed_j` destroys `ed_i`'s packet at `gw`.
    pub fn capture_loss_probability(
        &self,
        ed_i: usize,
        ed_j: usize,
        gw: usize,
        assignment: &Assignment,
    ) -> f64 {
        let omega = self
            .link
            .sir_threshold(assignment.sf[ed_i], assignment.sf[ed_j]);
        let gap = self.mean_rss_dbm(ed_i, gw, assignment) - self.mean_rss_dbm(ed_j, gw, assignment);
        gaussian_cdf(omega - gap, self.link.difference_sigma_db())
    }

    /// Probability that the pairwise time overlap between `i` and `j` occurs.
    pub fn interference_probability(&self, ed_i: usize, ed_j: usize, assignment: &Assignment) -> f64 {
        self.timing.interference[assignment.sf[ed_i].rank()][assignment.sf[ed_j].rank()]
    }

    /// Probability that no co-channel device corrupts `ed`'s packet at `gw`.
    pub fn survive_interference_probability(&self, ed: usize, gw: usize, assignment: &Assignment) -> f64 {
        let mut zeta = 1.0;
        for j in 0..self.num_eds() {
            if j == ed || !self.topology.same_channel(ed, j) {
                continue;
            }
            zeta *= 1.0
                - self.interference_probability(ed, j, assignment)
                    * self.capture_loss_probability(ed, j, gw, assignment);
        }
        zeta
    }

    pub fn pdr_per_gateway(&self, ed: usize, gw: usize, assignment: &Assignment) -> f64 {
        self.reception_probability(ed, gw, assignment)
            * self.survive_interference_probability(ed, gw, assignment)
    }

    /// Delivery probability through at least one gateway.
    pub fn pdr(&self, ed: usize, assignment: &Assignment) -> f64 {
        let miss: f64 = (0..self.num_gateways())
            .map(|k| 1.0 - self.pdr_per_gateway(ed, k, assignment))
            .product();
        1.0 - miss
    }

    /// Energy efficiency for a known delivery probability, bits per mJ.
    pub fn energy_efficiency_given_pdr(&self, sf: SpreadingFactor, tp: TxPower, pdr: f64) -> f64 {
        if pdr <= 0.0 {
            return 0.0;
        }
        let bits = f64::from(self.phy.payload_bytes * self.link.payload_bits_per_byte);
        let energy_mj = self.link.power_draw_mw(tp) * self.airtime(sf);
        bits / (energy_mj / pdr)
    }

    pub fn energy_efficiency(&self, ed: usize, assignment: &Assignment) -> f64 {
        self.energy_efficiency_given_pdr(assignment.sf[ed], assignment.tp[ed], self.pdr(ed, assignment))
    }

    /// PDR of every end device, computed in one pass.
    pub fn pdr_vector(&self, assignment: &Assignment) -> Result<Vec<f64>> {
        assignment.validate(self.num_eds())?;
        let n = self.num_eds();
        let k_count = self.num_gateways();
        let sigma = self.link.sigma_db;
        let diff_sigma = self.link.difference_sigma_db();

        // z[i][k]
        let z: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..k_count).map(|k| self.mean_rss_dbm(i, k, assignment)).collect())
            .collect();

        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let sf_i = assignment.sf[i];
            let eta = self.link.sensitivity(sf_i);
            let mut miss = 1.0;
            for k in 0..k_count {
                let psi = gaussian_cdf(z[i][k] - eta, sigma);
                let mut zeta = 1.0;
                for j in 0..n {
                    if j == i || !self.topology.same_channel(i, j) {
                        continue;
                    }
                    let sf_j = assignment.sf[j];
                    let h = self.timing.interference[sf_i.rank()][sf_j.rank()];
                    let omega = self.link.sir_threshold(sf_i, sf_j);
                    let loss = gaussian_cdf(omega - (z[i][k] - z[j][k]), diff_sigma);
                    zeta *= 1.0 - h * loss;
                }
                miss *= 1.0 - psi * zeta;
            }
            out.push(1.0 - miss);
        }
        Ok(out)
    }

    /// Full report of an assignment against the PDR threshold.
    pub fn evaluate(&self, assignment: &Assignment, pdr_threshold: f64) -> Result<EeReport> {
        let pdr_per_ed = self.pdr_vector(assignment)?;
        let ee_per_ed: Vec<f64> = pdr_per_ed
            .iter()
            .enumerate()
            .map(|(i, &p)| self.energy_efficiency_given_pdr(assignment.sf[i], assignment.tp[i], p))
            .collect();
        let mut system_ee = 0.0;
        for &e in &ee_per_ed {
            system_ee += e;
        }
        let feasible_per_ed = pdr_per_ed.iter().map(|&p| p >= pdr_threshold).collect();
        Ok(EeReport {
            pdr_per_ed,
            ee_per_ed,
            system_ee,
            feasible_per_ed,
            pdr_threshold,
        })
    }
}
