//! Synthetic message logs with the five position-falsification attacks.
//!
//! Each sender moves along a straight line and broadcasts once per second.
//! Honest senders report their GPS position with Gaussian noise. Attackers
//! report their true speed and a falsified position:
//!
//! | code | behavior |
//! |---|---|
//! | 1 | a fixed position for the whole trace |
//! | 2 | true position plus a fixed per-sender displacement |
//! | 4 | a fresh uniform position on the map per message |
//! | 8 | true position plus fresh uniform noise per message |
//! | 16 | true position until an onset, then frozen there with zero speed |
//!
//! Every message of an attacking sender carries its attack label,
//! including Eventual Stop messages sent before the onset. The magnitudes
//! approximate the published attack taxonomy and are not the original
//! simulation parameters.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{write_veremi_csv, AttackCodeMap, ColumnSchema, Dataset, Manifest};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_benign: usize,
    /// Message count per attack code.
    pub per_attack: BTreeMap<i64, usize>,
    pub messages_per_sender: usize,
    /// Side of the square map, meters.
    pub extent: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Standard deviation of honest position reports, meters.
    pub gps_noise: f64,
    pub speed_noise: f64,
    pub offset_min: f64,
    pub offset_max: f64,
    /// Half-width of the per-message box used by Random Offset.
    pub random_offset_max: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_benign: 5000,
            per_attack: [1, 2, 4, 8, 16].into_iter().map(|c| (c, 500)).collect(),
            messages_per_sender: 5,
            extent: 2000.0,
            speed_min: 5.0,
            speed_max: 30.0,
            gps_noise: 2.0,
            speed_noise: 0.2,
            offset_min: 10.0,
            offset_max: 100.0,
            random_offset_max: 100.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("extent", self.extent),
            ("speed_max", self.speed_max),
            ("offset_max", self.offset_max),
            ("random_offset_max", self.random_offset_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max) {
            return Err(Error::Config("need 0 <= speed_min <= speed_max".into()));
        }
        if !(self.offset_min >= 0.0 && self.offset_min <= self.offset_max) {
            return Err(Error::Config("need 0 <= offset_min <= offset_max".into()));
        }
        if !(self.gps_noise >= 0.0 && self.speed_noise >= 0.0) {
            return Err(Error::Config("noise levels must be >= 0".into()));
        }
        if self.messages_per_sender == 0 {
            return Err(Error::Config("messages_per_sender must be >= 1".into()));
        }
        let codes = AttackCodeMap::veremi();
        for code in self.per_attack.keys() {
            if *code == 0 || codes.label_of(*code).is_none() {
                return Err(Error::Config(format!("unknown attack code {code}")));
            }
        }
        Ok(())
    }
}

struct Message {
    send: f64,
    sender: u64,
    pos: [f64; 2],
    spd: [f64; 2],
    label: usize,
}

fn sender_sizes(count: usize, per_sender: usize) -> Vec<usize> {
    let mut sizes = vec![per_sender; count / per_sender];
    if !count.is_multiple_of(per_sender) {
        sizes.push(count % per_sender);
    }
    sizes
}

fn uniform_pos(rng: &mut ChaCha8Rng, extent: f64) -> [f64; 2] {
    [rng.random_range(0.0..extent), rng.random_range(0.0..extent)]
}

fn trace(
    cfg: &SynthConfig,
    code: i64,
    label: usize,
    sender: u64,
    n: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Message>,
) {
    let start = uniform_pos(rng, cfg.extent);
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
    let v = [speed * heading.cos(), speed * heading.sin()];
    let t0 = rng.random_range(0.0..1000.0);
    let offset = {
        let r = rng.random_range(cfg.offset_min..=cfg.offset_max);
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        [r * a.cos(), r * a.sin()]
    };
    let fixed = uniform_pos(rng, cfg.extent);
    let onset = rng.random_range(0..n.max(1));
    let mut frozen = None;
    let gps_noise = Normal::new(0.0, cfg.gps_noise).expect("validated sd");
    let speed_noise = Normal::new(0.0, cfg.speed_noise).expect("validated sd");
    for step in 0..n {
        let dt = step as f64;
        let truth = [start[0] + v[0] * dt, start[1] + v[1] * dt];
        let gps = [truth[0] + gps_noise.sample(rng), truth[1] + gps_noise.sample(rng)];
        let mut spd = [v[0] + speed_noise.sample(rng), v[1] + speed_noise.sample(rng)];
        let pos = match code {
            1 => fixed,
            2 => [gps[0] + offset[0], gps[1] + offset[1]],
            4 => uniform_pos(rng, cfg.extent),
            8 => {
                let r = cfg.random_offset_max;
                [gps[0] + rng.random_range(-r..=r), gps[1] + rng.random_range(-r..=r)]
            }
            16 if step >= onset => {
                spd = [0.0, 0.0];
                *frozen.get_or_insert(gps)
            }
            _ => gps,
        };
        out.push(Message {
            send: t0 + dt + rng.random_range(0.0..0.05),
            sender,
            pos,
            spd,
            label,
        });
    }
}

/// Generates the log in the canonical schema with every class of the
/// attack-code table present in the class list.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let codes = AttackCodeMap::veremi();
    let mut rng = seed::rng(seed::derive_named(cfg.seed, "synth"));

    let mut plan: Vec<(i64, usize)> = sender_sizes(cfg.n_benign, cfg.messages_per_sender)
        .into_iter()
        .map(|n| (0, n))
        .collect();
    for (&code, &count) in &cfg.per_attack {
        plan.extend(sender_sizes(count, cfg.messages_per_sender).into_iter().map(|n| (code, n)));
    }
    // every sender id belongs to exactly one class; ids are shuffled so
    // classes do not occupy contiguous id blocks
    let mut ids: Vec<u64> = (0..plan.len() as u64).map(|i| 10 + 6 * i).collect();
    ids.shuffle(&mut rng);

    let mut messages = Vec::with_capacity(cfg.n_benign + cfg.per_attack.values().sum::<usize>());
    for (s, &(code, n)) in plan.iter().enumerate() {
        let label = codes.label_of(code).expect("validated code");
        let mut sender_rng = seed::rng(seed::derive(cfg.seed, s as u64));
        trace(cfg, code, label, ids[s], n, &mut sender_rng, &mut messages);
    }
    messages.sort_by(|a, b| a.send.total_cmp(&b.send).then(a.sender.cmp(&b.sender)));

    let schema = ColumnSchema::canonical();
    let d = schema.n_features();
    let mut rows = Array2::zeros((messages.len(), d));
    let mut labels = Vec::with_capacity(messages.len());
    for (i, m) in messages.iter().enumerate() {
        let delay = 0.001 + 0.009 * rng.random::<f64>();
        let values = [
            m.send + delay,
            m.send,
            m.sender as f64,
            (i + 1) as f64,
            m.pos[0],
            m.pos[1],
            0.0,
            m.spd[0],
            m.spd[1],
            0.0,
        ];
        for (j, v) in values.into_iter().enumerate() {
            rows[[i, j]] = v;
        }
        labels.push(m.label);
    }
    Dataset::new(rows, labels, schema, codes.class_names())
}

/// Writes `<stem>.csv` in the raw log layout and `<stem>.manifest.json`.
pub fn write(cfg: &SynthConfig, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let d = generate(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{stem}.csv"));
    let manifest = dir.join(format!("{stem}.manifest.json"));
    write_veremi_csv(&d, &AttackCodeMap::veremi(), &csv)?;
    let mut m = Manifest::describe(&d, None, Some(cfg.seed));
    m.notes.push("synthetic log; attack magnitudes approximate the published taxonomy".into());
    m.write(&manifest)?;
    Ok((csv, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_histogram_matches_config() {
        let d = generate(&SynthConfig::default()).unwrap();
        assert_eq!(d.n_rows(), 7500);
        assert_eq!(d.class_counts(), vec![5000, 500, 500, 500, 500, 500]);
    }

    #[test]
    fn benign_only_is_single_class() {
        let cfg = SynthConfig {
            n_benign: 120,
            per_attack: BTreeMap::new(),
            ..SynthConfig::default()
        };
        let d = generate(&cfg).unwrap();
        let present = d.class_counts().iter().filter(|&&c| c > 0).count();
        assert_eq!(present, 1);
    }

    #[test]
    fn constant_attackers_do_not_move() {
        let d = generate(&SynthConfig::default()).unwrap();
        let mut seen: BTreeMap<u64, [f64; 2]> = BTreeMap::new();
        for (row, &l) in d.rows().outer_iter().zip(d.labels()) {
            if d.class_names()[l] != "Constant Attack" {
                continue;
            }
            let p = [row[4], row[5]];
            let first = *seen.entry(row[2] as u64).or_insert(p);
            assert_eq!(first, p);
        }
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn senders_belong_to_one_class_and_runs_repeat() {
        let cfg = SynthConfig {
            n_benign: 300,
            per_attack: [(2, 60), (16, 60)].into_iter().collect(),
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        let mut owner: BTreeMap<u64, usize> = BTreeMap::new();
        for (row, &l) in a.rows().outer_iter().zip(a.labels()) {
            assert_eq!(*owner.entry(row[2] as u64).or_insert(l), l);
        }
        let other = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }
}
