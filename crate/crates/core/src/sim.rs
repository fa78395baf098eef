//! Event-level Monte Carlo simulation of unslotted ALOHA uplinks with
//! log-normal shadowing and SIR capture.
//!
//! Every end device emits a Poisson stream of first transmissions over the
//! horizon. A packet is received by a gateway when its shadowed RSS clears
//! the sensitivity and it survives every co-channel packet that overlaps its
//! protected part (the airtime minus the first `n_pr - 5` preamble symbols).
//! A packet is delivered when at least one gateway receives it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::analytic::{Assignment, EeReport, NetworkModel};
use crate::error::{Error, Result};
use crate::radio::{SpreadingFactor, PROTECTED_PREAMBLE_SYMBOLS};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceMode {
    /// Each overlapping packet is compared against the target on its own.
    #[default]
    Pairwise,
    /// Interferers are summed in linear power per interfering SF.
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShadowingMode {
    /// Fresh shadowing draw per packet per gateway.
    #[default]
    PerPacket,
    /// One draw per (end device, gateway) link for the whole replication.
    PerLink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub horizon_s: f64,
    pub replications: usize,
    pub rng_seed: u64,
    pub interference_mode: InterferenceMode,
    pub shadowing_mode: ShadowingMode,
    /// Worker threads for replications; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon_s: 7.0 * 24.0 * 3600.0,
            replications: 10,
            rng_seed: 0,
            interference_mode: InterferenceMode::Pairwise,
            shadowing_mode: ShadowingMode::PerPacket,
            threads: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_s.is_finite() && self.horizon_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon_s must be positive, got {}",
                self.horizon_s
            )));
        }
        if self.replications < 1 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome counters of one end device at one gateway.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayCounts {
    pub received: u64,
    pub lost_sensitivity: u64,
    pub lost_collision: u64,
}

impl GatewayCounts {
    pub fn total(&self) -> u64 {
        self.received + self.lost_sensitivity + self.lost_collision
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationCounts {
    pub sent: Vec<u64>,
    pub delivered: Vec<u64>,
    /// `[ed][gw]`
    pub per_gateway: Vec<Vec<GatewayCounts>>,
}

impl ReplicationCounts {
    pub fn pdr_per_ed(&self) -> Vec<f64> {
        self.sent
            .iter()
            .zip(&self.delivered)
            .map(|(&s, &d)| d as f64 / s as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Pooled over replications.
    pub pdr_per_ed: Vec<f64>,
    pub packets_sent: Vec<u64>,
    pub packets_received: Vec<u64>,
    pub replications: Vec<ReplicationCounts>,
    pub mae_vs_analytic: Option<f64>,
}

impl SimReport {
    /// Per-replication PDR MAE against the analytic report, with mean and
    /// 95% confidence half-width across replications.
    pub fn mae_summary(&self, analytic: &EeReport) -> Result<stats::Summary> {
        let per_rep = self
            .replications
            .iter()
            .map(|r| mae_vectors(&r.pdr_per_ed(), &analytic.pdr_per_ed))
            .collect::<Result<Vec<_>>>()?;
        Ok(stats::Summary::of(&per_rep))
    }

    pub fn with_mae(mut self, analytic: &EeReport) -> Result<Self> {
        self.mae_vs_analytic = Some(mae(&self, analytic)?);
        Ok(self)
    }
}

/// Mean absolute error of the pooled empirical PDR against the analytic PDR.
pub fn mae(sim: &SimReport, analytic: &EeReport) -> Result<f64> {
    mae_vectors(&sim.pdr_per_ed, &analytic.pdr_per_ed)
}

pub fn mae_vectors(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: b.len(),
            actual: a.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    start: f64,
    end: f64,
    /// start of the part that must not be overlapped
    protected_from: f64,
    ed: u32,
}

/// Runs all replications and pools their counters.
pub fn simulate(model: &NetworkModel, assignment: &Assignment, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    assignment.validate(model.num_eds())?;

    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cfg.threads
    }
    .min(cfg.replications)
    .max(1);

    let mut results: Vec<Option<Result<ReplicationCounts>>> = (0..cfg.replications).map(|_| None).collect();
    if threads == 1 {
        for (rep, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_replication(model, assignment, cfg, rep as u64));
        }
    } else {
        std::thread::scope(|scope| {
            let chunks: Vec<_> = results.chunks_mut(cfg.replications.div_ceil(threads)).collect();
            let mut offset = 0;
            for chunk in chunks {
                let base = offset;
                offset += chunk.len();
                scope.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(run_replication(model, assignment, cfg, (base + k) as u64));
                    }
                });
            }
        });
    }
    let replications = results
        .into_iter()
        .map(|r| r.expect("every replication ran"))
        .collect::<Result<Vec<_>>>()?;

    let n = model.num_eds();
    let mut packets_sent = vec![0u64; n];
    let mut packets_received = vec![0u64; n];
    for rep in &replications {
        for i in 0..n {
            packets_sent[i] += rep.sent[i];
            packets_received[i] += rep.delivered[i];
        }
    }
    let pdr_per_ed = packets_sent
        .iter()
        .zip(&packets_received)
        .map(|(&s, &d)| d as f64 / s as f64)
        .collect();
    Ok(SimReport {
        pdr_per_ed,
        packets_sent,
        packets_received,
        replications,
        mae_vs_analytic: None,
    })
}

/// Independent RNG stream of one replication.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

fn run_replication(
    model: &NetworkModel,
    assignment: &Assignment,
    cfg: &SimConfig,
    replication: u64,
) -> Result<ReplicationCounts> {
    let n = model.num_eds();
    let k_count = model.num_gateways();
    let phy = &model.phy;
    let link = &model.link;
    let mut rng = replication_rng(cfg.rng_seed, replication);

    let arrivals = Exp::new(phy.traffic_rate_hz)
        .map_err(|e| Error::InvalidConfig(format!("traffic rate: {e}")))?;
    let shadow = Normal::new(0.0, link.sigma_db)
        .map_err(|e| Error::InvalidConfig(format!("shadowing: {e}")))?;

    let unprotected = f64::from(phy.preamble_symbols - PROTECTED_PREAMBLE_SYMBOLS);
    let mut packets = Vec::new();
    for ed in 0..n {
        let sf = assignment.sf[ed];
        let airtime = model.airtime(sf);
        let guard = unprotected * model.timing().symbol_s[sf.rank()];
        let mut t = arrivals.sample(&mut rng);
        let mut count = 0;
        while t < cfg.horizon_s {
            packets.push(Packet {
                start: t,
                end: t + airtime,
                protected_from: t + guard,
                ed: ed as u32,
            });
            count += 1;
            t += arrivals.sample(&mut rng);
        }
        if count == 0 {
            return Err(Error::HorizonTooShort {
                ed,
                horizon_s: cfg.horizon_s,
            });
        }
    }
    packets.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.ed.cmp(&b.ed)));

    let mean_rss: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..k_count).map(|k| model.mean_rss_dbm(i, k, assignment)).collect())
        .collect();
    // rss[p * K + k]
    let rss: Vec<f64> = match cfg.shadowing_mode {
        ShadowingMode::PerPacket => {
            let mut out = Vec::with_capacity(packets.len() * k_count);
            for p in &packets {
                for k in 0..k_count {
                    out.push(mean_rss[p.ed as usize][k] - shadow.sample(&mut rng));
                }
            }
            out
        }
        ShadowingMode::PerLink => {
            let fixed: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..k_count).map(|k| mean_rss[i][k] - shadow.sample(&mut rng)).collect())
                .collect();
            packets
                .iter()
                .flat_map(|p| fixed[p.ed as usize].iter().copied())
                .collect()
        }
    };

    let longest_airtime = SpreadingFactor::all()
        .map(|sf| model.airtime(sf))
        .fold(0.0, f64::max);

    let mut sent = vec![0u64; n];
    let mut delivered = vec![0u64; n];
    let mut per_gateway = vec![vec![GatewayCounts::default(); k_count]; n];
    let mut interferers: Vec<usize> = Vec::new();
    let mut per_sf_power = [0.0f64; SpreadingFactor::COUNT];

    for (p_idx, p) in packets.iter().enumerate() {
        let ed = p.ed as usize;
        let sf_p = assignment.sf[ed];
        sent[ed] += 1;

        interferers.clear();
        for (q_idx, q) in packets.iter().enumerate().skip(p_idx + 1) {
            if q.start >= p.end {
                break;
            }
            if q.ed != p.ed && model.topology.same_channel(ed, q.ed as usize) && q.end > p.protected_from {
                interferers.push(q_idx);
            }
        }
        for q_idx in (0..p_idx).rev() {
            let q = &packets[q_idx];
            if q.start <= p.protected_from - longest_airtime {
                break;
            }
            if q.ed != p.ed
                && model.topology.same_channel(ed, q.ed as usize)
                && q.end > p.protected_from
                && q.start < p.end
            {
                interferers.push(q_idx);
            }
        }

        let eta = link.sensitivity(sf_p);
        let mut any = false;
        for k in 0..k_count {
            let signal = rss[p_idx * k_count + k];
            let counts = &mut per_gateway[ed][k];
            if signal < eta {
                counts.lost_sensitivity += 1;
                continue;
            }
            let captured = match cfg.interference_mode {
                InterferenceMode::Pairwise => interferers.iter().all(|&q_idx| {
                    let sf_q = assignment.sf[packets[q_idx].ed as usize];
                    signal - rss[q_idx * k_count + k] >= link.sir_threshold(sf_p, sf_q)
                }),
                InterferenceMode::Cumulative => {
                    per_sf_power.fill(0.0);
                    for &q_idx in &interferers {
                        let sf_q = assignment.sf[packets[q_idx].ed as usize];
                        per_sf_power[sf_q.rank()] += 10f64.powf(rss[q_idx * k_count + k] / 10.0);
                    }
                    SpreadingFactor::all().all(|sf_q| {
                        let power = per_sf_power[sf_q.rank()];
                        power == 0.0 || signal - 10.0 * power.log10() >= link.sir_threshold(sf_p, sf_q)
                    })
                }
            };
            if captured {
                counts.received += 1;
                any = true;
            } else {
                counts.lost_collision += 1;
            }
        }
        if any {
            delivered[ed] += 1;
        }
    }

    Ok(ReplicationCounts {
        sent,
        delivered,
        per_gateway,
    })
}
