use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Local dataset of one device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevicePartition {
    pub device: usize,
    pub indices: Vec<usize>,
    /// Classes the device was assigned, ascending.
    pub classes: Vec<usize>,
}

/// Gives each of `devices` a uniformly random set of `classes_per_device`
/// classes and `per_device` unused samples from them.
///
/// Samples are split evenly across the chosen classes; a class that runs short
/// is topped up from the device's other classes. Pools are shuffled once, so
/// each device takes a uniform random subset of what remains.
pub fn partition_dataset(
    labels: &[u8],
    classes: usize,
    devices: usize,
    per_device: usize,
    classes_per_device: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DevicePartition>> {
    if classes_per_device == 0 || classes_per_device > classes {
        return Err(Error::InvalidArgument(format!("{classes_per_device} classes per device out of {classes}")));
    }
    if devices * per_device > labels.len() {
        return Err(Error::Dataset(format!(
            "{devices} devices x {per_device} samples exceed {} available",
            labels.len()
        )));
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l as usize].push(i);
    }
    for p in pools.iter_mut() {
        p.shuffle(rng);
    }
    let mut last = None;
    // Near-exhaustive splits can strand the last devices; redraw the class sets.
    for _ in 0..MAX_ATTEMPTS {
        match assign(&pools, devices, per_device, classes_per_device, rng) {
            Ok(parts) => return Ok(parts),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

const MAX_ATTEMPTS: usize = 1000;

fn assign(
    pools: &[Vec<usize>],
    devices: usize,
    per_device: usize,
    classes_per_device: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DevicePartition>> {
    let mut pools = pools.to_vec();
    let share = per_device / classes_per_device;
    let mut out = Vec::with_capacity(devices);
    for device in 0..devices {
        let eligible: Vec<usize> = (0..pools.len()).filter(|&c| !pools[c].is_empty()).collect();
        if eligible.len() < classes_per_device {
            return Err(Error::Dataset(format!("device {device}: fewer than {classes_per_device} classes left")));
        }
        let mut chosen: Vec<usize> = eligible.choose_multiple(rng, classes_per_device).copied().collect();
        chosen.sort_unstable();
        let available: usize = chosen.iter().map(|&c| pools[c].len()).sum();
        if available < per_device {
            return Err(Error::Dataset(format!(
                "device {device}: classes {chosen:?} hold {available} samples, need {per_device}"
            )));
        }
        let mut take: Vec<usize> = chosen
            .iter()
            .enumerate()
            .map(|(i, &c)| (share + usize::from(i < per_device % classes_per_device)).min(pools[c].len()))
            .collect();
        let mut missing = per_device - take.iter().sum::<usize>();
        for (t, &c) in take.iter_mut().zip(&chosen) {
            let extra = missing.min(pools[c].len() - *t);
            *t += extra;
            missing -= extra;
        }
        let mut indices = Vec::with_capacity(per_device);
        for (&c, &t) in chosen.iter().zip(&take) {
            let at = pools[c].len() - t;
            indices.extend(pools[c].drain(at..));
        }
        indices.sort_unstable();
        out.push(DevicePartition { device, indices, classes: chosen });
    }
    Ok(out)
}
