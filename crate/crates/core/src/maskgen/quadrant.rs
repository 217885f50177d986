use super::{MaskOrigin, MaskPair};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quadrant {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::TopLeft,
        Quadrant::TopRight,
        Quadrant::BottomLeft,
        Quadrant::BottomRight,
    ];
}

/// Source is the chosen `(L/2)x(L/2)` corner block.
pub fn quadrant_mask(grid: &GridSpec, quadrant: Quadrant) -> Result<MaskPair> {
    let l = grid.side();
    if l % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "quadrant masking needs an even grid, got L={l}"
        )));
    }
    let h = l / 2;
    let (bottom, right) = match quadrant {
        Quadrant::TopLeft => (false, false),
        Quadrant::TopRight => (false, true),
        Quadrant::BottomLeft => (true, false),
        Quadrant::BottomRight => (true, true),
    };
    let flags: Vec<bool> = (0..grid.num_patches())
        .map(|i| {
            let (r, c) = grid.row_col(i);
            (r >= h) == bottom && (c >= h) == right
        })
        .collect();
    MaskPair::from_source_flags(grid, &flags, MaskOrigin::Quadrant(quadrant))
}

pub fn sample_quadrant_mask<R: Rng + ?Sized>(grid: &GridSpec, rng: &mut R) -> Result<MaskPair> {
    if grid.side() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "quadrant masking needs an even grid, got L={}",
            grid.side()
        )));
    }
    let q = Quadrant::ALL[rng.random_range(0..4)];
    quadrant_mask(grid, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn bottom_left_counts() {
        let g = GridSpec::default();
        let m = quadrant_mask(&g, Quadrant::BottomLeft).unwrap();
        assert_eq!(m.source().len(), 49);
        assert_eq!(m.target().len(), 147);
        assert!(m
            .source()
            .iter()
            .all(|&i| g.row_col(i).0 >= 7 && g.row_col(i).1 < 7));
    }

    #[test]
    fn smallest_grid_single_patch() {
        let g = GridSpec::new(2, 8).unwrap();
        for q in Quadrant::ALL {
            assert_eq!(quadrant_mask(&g, q).unwrap().source().len(), 1);
        }
    }

    #[test]
    fn odd_grid_rejected() {
        let g = GridSpec::new(5, 4).unwrap();
        assert!(sample_quadrant_mask(&g, &mut seeded(0)).is_err());
    }

    #[test]
    fn uniform_choice() {
        let g = GridSpec::default();
        let mut rng = seeded(11);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            match sample_quadrant_mask(&g, &mut rng).unwrap().origin() {
                MaskOrigin::Quadrant(q) => counts[Quadrant::ALL.iter().position(|&x| x == q).unwrap()] += 1,
                _ => unreachable!(),
            }
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.25).abs() <= 0.02, "frequency {f}");
        }
    }
}
