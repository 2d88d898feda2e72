//! Shared Gaussian sensing matrices.
//!
//! Row `m` of the `N x N` master matrix for block `b` is drawn from its own
//! ChaCha stream keyed by `(b, m)`, so any device can materialize the first
//! `M` rows without generating the rest.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{MatRef, Matrix};
use crate::par;

const ROW_DOMAIN: u64 = 0x4643_5350_524f_4a31;

fn row_rng(master_seed: u64, epoch: u64, block: usize, row: usize) -> ChaCha8Rng {
    let key = master_seed ^ ROW_DOMAIN ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(((block as u64) << 32) | row as u64);
    rng
}

/// Fills one master-matrix row.
pub fn fill_projection_row(master_seed: u64, epoch: u64, block: usize, row: usize, out: &mut [f64]) {
    let mut rng = row_rng(master_seed, epoch, block, row);
    out.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
}

/// First `m` rows of the `n x n` master matrix of `block`.
///
/// `epoch` selects an independent family of matrices; experiments that keep the
/// projection fixed across rounds pass 0.
pub fn projection_rows(master_seed: u64, epoch: u64, block: usize, m: usize, n: usize) -> Result<Matrix> {
    if m > n {
        return Err(Error::ProjectionTooTall { rows: m, cols: n });
    }
    let rows = par::map_range(m, |r| {
        let mut row = vec![0.0; n];
        fill_projection_row(master_seed, epoch, block, r, &mut row);
        row
    });
    Ok(Matrix::from_row_major(m, n, rows.concat()))
}

type Slot = Arc<OnceLock<Arc<Matrix>>>;

/// Caches one row block per `(epoch, block)` at the largest height requested so
/// far; smaller requests borrow a prefix.
#[derive(Debug)]
pub struct ProjectionBank {
    master_seed: u64,
    n: usize,
    max_rows: usize,
    slots: Mutex<HashMap<(u64, usize), Slot>>,
}

impl ProjectionBank {
    /// `max_rows` is the tallest sensing matrix any device will use.
    pub fn new(master_seed: u64, n: usize, max_rows: usize) -> Result<Self> {
        if max_rows > n {
            return Err(Error::ProjectionTooTall { rows: max_rows, cols: n });
        }
        Ok(Self { master_seed, n, max_rows, slots: Mutex::default() })
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn max_rows(&self) -> usize {
        self.max_rows
    }

    /// Full cached row block for `(epoch, block)`.
    pub fn rows(&self, epoch: u64, block: usize) -> Arc<Matrix> {
        let slot = {
            let mut map = self.slots.lock().expect("projection bank poisoned");
            map.entry((epoch, block)).or_default().clone()
        };
        slot.get_or_init(|| {
            Arc::new(
                projection_rows(self.master_seed, epoch, block, self.max_rows, self.n)
                    .expect("bank height checked at construction"),
            )
        })
        .clone()
    }

    /// Drops cached matrices of every epoch other than `keep`.
    pub fn retain_epoch(&self, keep: u64) {
        self.slots.lock().expect("projection bank poisoned").retain(|(e, _), _| *e == keep);
    }
}

/// A sensing matrix: the first `rows` rows of a shared row block.
#[derive(Debug, Clone)]
pub struct Sensing {
    full: Arc<Matrix>,
    rows: usize,
}

impl Sensing {
    pub fn new(full: Arc<Matrix>, rows: usize) -> Result<Self> {
        if rows > full.rows() {
            return Err(Error::ProjectionTooTall { rows, cols: full.rows() });
        }
        Ok(Self { full, rows })
    }

    pub fn from_matrix(m: Matrix) -> Self {
        let rows = m.rows();
        Self { full: Arc::new(m), rows }
    }

    pub fn view(&self) -> MatRef<'_> {
        self.full.prefix(self.rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.full.cols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_property() {
        let a = projection_rows(11, 0, 2, 4, 40).unwrap();
        let b = projection_rows(11, 0, 2, 8, 40).unwrap();
        assert_eq!(a.as_slice(), &b.as_slice()[..4 * 40]);
    }

    #[test]
    fn reproducible_and_block_dependent() {
        let a = projection_rows(5, 0, 0, 3, 16).unwrap();
        assert_eq!(a, projection_rows(5, 0, 0, 3, 16).unwrap());
        assert_ne!(a, projection_rows(5, 0, 1, 3, 16).unwrap());
        assert_ne!(a, projection_rows(5, 1, 0, 3, 16).unwrap());
    }

    #[test]
    fn rejects_tall() {
        assert!(matches!(projection_rows(1, 0, 0, 5, 4), Err(Error::ProjectionTooTall { rows: 5, cols: 4 })));
    }

    #[test]
    fn bank_serves_prefixes() {
        let bank = ProjectionBank::new(3, 30, 12).unwrap();
        let s = Sensing::new(bank.rows(0, 1), 5).unwrap();
        let direct = projection_rows(3, 0, 1, 5, 30).unwrap();
        assert_eq!(s.view().as_slice(), direct.as_slice());
        assert!(Arc::ptr_eq(&bank.rows(0, 1), &bank.rows(0, 1)));
    }
}
