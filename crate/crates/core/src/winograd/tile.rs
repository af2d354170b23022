use super::generator::MAX_ALPHA;

/// Output tile sizes considered by [`choose_tile`].
pub const TILE_CANDIDATES: [usize; 4] = [1, 2, 4, 6];

/// Arithmetic cost of one `n x n` output tile:
/// `2 ic a^3 + ic oc a^2 + n a (2n + k - 1)` with `a = n + k - 1`.
pub fn winograd_cost(n: usize, k: usize, in_channels: usize, out_channels: usize) -> u128 {
    let a = (n + k - 1) as u128;
    let (n, k, ic, oc) = (n as u128, k as u128, in_channels as u128, out_channels as u128);
    2 * ic * a * a * a + ic * oc * a * a + n * a * (2 * n + k - 1)
}

/// Candidate tile sizes whose `alpha` stays within the generator's range.
pub fn tile_candidates(k: usize) -> impl Iterator<Item = usize> {
    TILE_CANDIDATES.into_iter().filter(move |&n| n + k - 1 <= MAX_ALPHA)
}

/// Picks the output tile size with the lowest cost per output element,
/// `C(n) / n^2`; ties go to the smaller tile. `1` means "use the sliding
/// window". The output extent does not enter the per-element cost.
pub fn choose_tile(k: usize, in_channels: usize, out_channels: usize, _out_w: usize, _out_h: usize) -> usize {
    let mut best: Option<(usize, u128)> = None;
    for n in tile_candidates(k.max(1)) {
        let cost = winograd_cost(n, k.max(1), in_channels, out_channels);
        best = match best {
            // cost / n^2 < best_cost / bn^2, cross-multiplied to stay exact
            Some((bn, bc)) if cost * (bn * bn) as u128 >= bc * (n * n) as u128 => Some((bn, bc)),
            _ => Some((n, cost)),
        };
    }
    best.map_or(1, |(n, _)| n)
}

/// How the output plane is cut into tiles and grouped into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSchedule {
    pub n_hat: usize,
    /// Tiles processed together: `floor(ow * oh / n^2)`, at least 1.
    pub batch: usize,
    pub tiles_y: usize,
    pub tiles_x: usize,
}

impl TileSchedule {
    pub fn new(n_hat: usize, out_h: usize, out_w: usize) -> Self {
        let tiles_y = out_h.div_ceil(n_hat);
        let tiles_x = out_w.div_ceil(n_hat);
        let batch = ((out_w * out_h) / (n_hat * n_hat)).clamp(1, (tiles_y * tiles_x).max(1));
        TileSchedule {
            n_hat,
            batch,
            tiles_y,
            tiles_x,
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch.max(1);
        self
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_y * self.tiles_x
    }

    /// Top-left output coordinate of tile `i` (row-major over tiles).
    pub fn tile_origin(&self, i: usize) -> (usize, usize) {
        ((i / self.tiles_x) * self.n_hat, (i % self.tiles_x) * self.n_hat)
    }

    pub fn tiles(&self) -> Vec<(usize, usize)> {
        (0..self.tile_count()).map(|i| self.tile_origin(i)).collect()
    }
}
