#![allow(clippy::needless_range_loop)]

//! Helpers shared by the integration tests.

use ocrrag_core::fmtnoise::{GridCell, Slot, TableGrid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A grid of at most 8x8 lowercase-word cells with up to two merged
/// rectangles. The flag tells whether any merge was placed.
pub fn random_grid(r: &mut ChaCha8Rng) -> (TableGrid, bool) {
    let rows = r.random_range(1..=8);
    let cols = r.random_range(1..=8);
    let mut owner: Vec<Vec<Option<(usize, usize)>>> = vec![vec![None; cols]; rows];
    let mut spans = Vec::new();
    for _ in 0..r.random_range(0..=2) {
        let (r0, c0) = (r.random_range(0..rows), r.random_range(0..cols));
        let (h, w) = (r.random_range(1..=rows - r0), r.random_range(1..=cols - c0));
        if h * w < 2 {
            continue;
        }
        if (r0..r0 + h).any(|i| (c0..c0 + w).any(|j| owner[i][j].is_some())) {
            continue;
        }
        for row in owner.iter_mut().skip(r0).take(h) {
            for cell in row.iter_mut().skip(c0).take(w) {
                *cell = Some((r0, c0));
            }
        }
        spans.push((r0, c0, h, w));
    }
    let word = |r: &mut ChaCha8Rng| -> String {
        let n = r.random_range(1..=6);
        (0..n)
            .map(|_| char::from(b'a' + r.random_range(0..26u8)))
            .collect()
    };
    let mut grid = Vec::new();
    for i in 0..rows {
        let mut row = Vec::new();
        for j in 0..cols {
            row.push(match owner[i][j] {
                Some((r0, c0)) if (r0, c0) != (i, j) => Slot::Covered { row: r0, col: c0 },
                Some(_) => {
                    let &(_, _, h, w) = spans.iter().find(|s| (s.0, s.1) == (i, j)).unwrap();
                    Slot::Anchor(GridCell {
                        text: word(r),
                        rowspan: h,
                        colspan: w,
                    })
                }
                None => Slot::Anchor(GridCell::new(word(r))),
            });
        }
        grid.push(row);
    }
    (TableGrid { rows: grid }, !spans.is_empty())
}
