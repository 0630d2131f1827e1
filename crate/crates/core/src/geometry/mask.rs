use super::BoundingBox;

/// Side length of the spatial relation grid.
pub const MASK_SIZE: usize = 27;

/// Two-channel binary footprint of a subject/object pair, rasterized over
/// the pair's union box. Channel 0 is the subject, channel 1 the object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialMask {
    cells: Vec<u8>,
}

impl SpatialMask {
    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.cells[(channel * MASK_SIZE + row) * MASK_SIZE + col]
    }

    pub fn popcount(&self, channel: usize) -> usize {
        let n = MASK_SIZE * MASK_SIZE;
        self.cells[channel * n..(channel + 1) * n]
            .iter()
            .map(|&c| c as usize)
            .sum()
    }

    /// Row-major `[2, 27, 27]` values as floats.
    pub fn to_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| c as f64).collect()
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    /// The same mask mirrored along the x axis.
    pub fn mirrored(&self) -> SpatialMask {
        let mut cells = vec![0u8; self.cells.len()];
        for ch in 0..2 {
            for r in 0..MASK_SIZE {
                for c in 0..MASK_SIZE {
                    cells[(ch * MASK_SIZE + r) * MASK_SIZE + (MASK_SIZE - 1 - c)] = self.get(ch, r, c);
                }
            }
        }
        SpatialMask { cells }
    }
}

/// Which of the `MASK_SIZE` cells along one axis have their center inside
/// `[lo, hi]`, where the grid spans `[origin, origin + extent]`.
///
/// The center of cell `i` sits at `origin + (2i + 1) * extent / 54`; the
/// comparison is done multiplied out so integer coordinates are exact.
fn axis_cover(lo: f64, hi: f64, origin: f64, extent: f64) -> [bool; MASK_SIZE] {
    let denom = (2 * MASK_SIZE) as f64;
    let mut out = [false; MASK_SIZE];
    for (i, slot) in out.iter_mut().enumerate() {
        let scaled = (2 * i + 1) as f64 * extent;
        *slot = scaled >= denom * (lo - origin) && scaled <= denom * (hi - origin);
    }
    out
}

/// Rasterize a subject and object box onto a 27x27 grid over their union.
pub fn spatial_mask(subject: &BoundingBox, object: &BoundingBox) -> SpatialMask {
    let union = subject.union_box(object);
    let (ox, oy, w, h) = (union.x1(), union.y1(), union.width(), union.height());
    let mut cells = vec![0u8; 2 * MASK_SIZE * MASK_SIZE];
    for (ch, b) in [subject, object].into_iter().enumerate() {
        let cols = axis_cover(b.x1(), b.x2(), ox, w);
        let rows = axis_cover(b.y1(), b.y2(), oy, h);
        for (r, &in_row) in rows.iter().enumerate() {
            if !in_row {
                continue;
            }
            for (c, &in_col) in cols.iter().enumerate() {
                if in_col {
                    cells[(ch * MASK_SIZE + r) * MASK_SIZE + c] = 1;
                }
            }
        }
    }
    SpatialMask { cells }
}
