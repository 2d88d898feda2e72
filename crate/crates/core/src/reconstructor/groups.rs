use serde::{Deserialize, Serialize};

/// One recovery group: devices that share a sensing matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub ratio: f64,
    /// Projected dimension `M` shared by all members.
    pub rows: usize,
    /// Device ids in ascending order.
    pub members: Vec<usize>,
}

/// Partition of the participating devices into recovery groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub groups: Vec<Group>,
    pub cap: usize,
}

impl GroupPlan {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Buckets devices by `(R, M)` and splits each bucket into groups of at most
/// `cap` devices in ascending id order. Buckets are emitted by ascending `R`
/// then `M`.
///
/// `devices` holds `(device_id, R, M)`.
pub fn assign_groups(devices: &[(usize, f64, usize)], cap: usize) -> GroupPlan {
    let cap = cap.max(1);
    let mut sorted = devices.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    let mut groups: Vec<Group> = Vec::new();
    for (id, ratio, rows) in sorted {
        match groups.last_mut() {
            Some(g) if g.ratio.to_bits() == ratio.to_bits() && g.rows == rows && g.members.len() < cap => {
                g.members.push(id)
            }
            _ => groups.push(Group { ratio, rows, members: vec![id] }),
        }
    }
    GroupPlan { groups, cap }
}
