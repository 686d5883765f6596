use super::Splat;

pub const TILE_SIZE: usize = 16;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Aabb {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Aabb {
    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn area(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }

    pub fn intersect(&self, other: &Aabb) -> Aabb {
        Aabb {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Pixels whose centers lie within `cutoff_sigma·√λ_max(Σ)` of the mean on
/// each axis, clipped to the image. `None` when the clip is empty.
pub fn bound_splat(splat: &Splat, width: usize, height: usize, cutoff_sigma: f64) -> Option<Aabb> {
    if !(splat.opacity > 0.0) {
        return None;
    }
    let (lambda_max, _) = splat.cov.eigenvalues();
    let radius = cutoff_sigma * lambda_max.max(0.0).sqrt();
    let axis = |center: f64, limit: usize| -> Option<(usize, usize)> {
        let lo = (center - radius - 0.5).ceil();
        let hi = (center + radius - 0.5).floor() + 1.0;
        if !(lo.is_finite() && hi.is_finite()) {
            return None;
        }
        let lo = lo.max(0.0);
        let hi = hi.min(limit as f64);
        (lo < hi).then_some((lo as usize, hi as usize))
    };
    let (x0, x1) = axis(splat.mean.x, width)?;
    let (y0, y1) = axis(splat.mean.y, height)?;
    Some(Aabb { x0, y0, x1, y1 })
}

/// Per-tile splat lists in compressed-row form.
#[derive(Clone, Debug)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    offsets: Vec<usize>,
    entries: Vec<u32>,
    bounds: Vec<Option<Aabb>>,
}

impl TileGrid {
    /// Bins splats into tiles. Within a tile, entries appear in the order of
    /// `order`, which must be a permutation of the splat indices.
    pub fn build(splats: &[Splat], order: &[u32], width: usize, height: usize, cutoff_sigma: f64) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let bounds: Vec<Option<Aabb>> = splats.iter().map(|s| bound_splat(s, width, height, cutoff_sigma)).collect();

        let tile_span = |b: &Aabb| (b.x0 / TILE_SIZE, (b.x1 - 1) / TILE_SIZE, b.y0 / TILE_SIZE, (b.y1 - 1) / TILE_SIZE);

        let mut counts = vec![0usize; tiles_x * tiles_y + 1];
        for &i in order {
            if let Some(b) = &bounds[i as usize] {
                let (tx0, tx1, ty0, ty1) = tile_span(b);
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        counts[ty * tiles_x + tx + 1] += 1;
                    }
                }
            }
        }
        for t in 1..counts.len() {
            counts[t] += counts[t - 1];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut entries = vec![0u32; *offsets.last().unwrap_or(&0)];
        for &i in order {
            if let Some(b) = &bounds[i as usize] {
                let (tx0, tx1, ty0, ty1) = tile_span(b);
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        let t = ty * tiles_x + tx;
                        entries[cursor[t]] = i;
                        cursor[t] += 1;
                    }
                }
            }
        }
        Self { width, height, tiles_x, tiles_y, offsets, entries, bounds }
    }

    /// Bins splats in index order.
    pub fn build_indexed(splats: &[Splat], width: usize, height: usize, cutoff_sigma: f64) -> Self {
        let order: Vec<u32> = (0..splats.len() as u32).collect();
        Self::build(splats, &order, width, height, cutoff_sigma)
    }

    /// Bins splats front to back by depth, ties broken by index.
    pub fn build_depth_sorted(splats: &[Splat], width: usize, height: usize, cutoff_sigma: f64) -> Self {
        let mut order: Vec<u32> = (0..splats.len() as u32).collect();
        order.sort_by(|&a, &b| {
            splats[a as usize]
                .depth
                .total_cmp(&splats[b as usize].depth)
                .then(a.cmp(&b))
        });
        Self::build(splats, &order, width, height, cutoff_sigma)
    }

    pub fn num_tiles(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn tile_entries(&self, tile: usize) -> &[u32] {
        &self.entries[self.offsets[tile]..self.offsets[tile + 1]]
    }

    pub fn tile_rect(&self, tile: usize) -> Aabb {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        Aabb {
            x0: tx * TILE_SIZE,
            y0: ty * TILE_SIZE,
            x1: ((tx + 1) * TILE_SIZE).min(self.width),
            y1: ((ty + 1) * TILE_SIZE).min(self.height),
        }
    }

    pub fn bounds(&self, splat: usize) -> Option<&Aabb> {
        self.bounds[splat].as_ref()
    }

    /// Total number of splat-tile pairs.
    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }
}
