//! Site bookkeeping for regular (dilating) sparse convolution.

use crate::nn::{Rule, Rulebook};

/// Active sites of a batch of sparse maps, sorted by `(batch, row, col)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sites {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub keys: Vec<(u32, u32, u32)>,
}

impl Sites {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Flat index of each site into a dense `[batch, height, width]` map.
    pub fn dense_cells(&self) -> Vec<usize> {
        self.keys
            .iter()
            .map(|&(b, r, c)| (b as usize * self.height + r as usize) * self.width + c as usize)
            .collect()
    }
}

/// Builds the rulebook of a `k × k` convolution with the given stride and
/// padding. An output site is active iff at least one active input falls in
/// its receptive field. Tap `ky·k + kx` matches the dense weight layout.
pub fn regular_rulebook(input: &Sites, k: usize, stride: usize, pad: usize) -> (Rulebook, Sites) {
    let ho = (input.height + 2 * pad - k) / stride + 1;
    let wo = (input.width + 2 * pad - k) / stride + 1;
    let mut raw: Vec<((u32, u32, u32), u16, u32)> = Vec::with_capacity(input.len() * 4);
    for (i, &(b, r, c)) in input.keys.iter().enumerate() {
        for ky in 0..k {
            let ny = r as usize + pad;
            if ny < ky || !(ny - ky).is_multiple_of(stride) || (ny - ky) / stride >= ho {
                continue;
            }
            let oy = (ny - ky) / stride;
            for kx in 0..k {
                let nx = c as usize + pad;
                if nx < kx || !(nx - kx).is_multiple_of(stride) || (nx - kx) / stride >= wo {
                    continue;
                }
                let ox = (nx - kx) / stride;
                raw.push(((b, oy as u32, ox as u32), (ky * k + kx) as u16, i as u32));
            }
        }
    }
    let mut slot = vec![u32::MAX; input.batch * ho * wo];
    let flat = |(b, y, x): (u32, u32, u32)| (b as usize * ho + y as usize) * wo + x as usize;
    for r in &raw {
        slot[flat(r.0)] = 0;
    }
    let mut out_keys = Vec::new();
    for (idx, s) in slot.iter_mut().enumerate() {
        if *s == 0 {
            *s = out_keys.len() as u32;
            let (b, rest) = (idx / (ho * wo), idx % (ho * wo));
            out_keys.push((b as u32, (rest / wo) as u32, (rest % wo) as u32));
        }
    }
    // Indexed by (output, tap); each holds at most one input.
    let taps = k * k;
    let mut table = vec![u32::MAX; out_keys.len() * taps];
    for &(key, tap, input) in &raw {
        table[slot[flat(key)] as usize * taps + tap as usize] = input;
    }
    let rules: Vec<Rule> = table
        .iter()
        .enumerate()
        .filter(|(_, &i)| i != u32::MAX)
        .map(|(j, &input)| Rule {
            output: (j / taps) as u32,
            tap: (j % taps) as u16,
            input,
        })
        .collect();
    let book = Rulebook {
        n_in: input.len(),
        n_out: out_keys.len(),
        taps: k * k,
        rules,
    };
    let sites = Sites {
        batch: input.batch,
        height: ho,
        width: wo,
        keys: out_keys,
    };
    (book, sites)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::Tape;

    fn single(r: u32, c: u32, h: usize, w: usize) -> Sites {
        Sites {
            batch: 1,
            height: h,
            width: w,
            keys: vec![(0, r, c)],
        }
    }

    #[test]
    fn interior_site_reaches_four_outputs() {
        let (book, out) = regular_rulebook(&single(3, 5, 8, 8), 3, 2, 1);
        assert_eq!(out.keys, vec![(0, 1, 2), (0, 1, 3), (0, 2, 2), (0, 2, 3)]);
        assert_eq!(book.rules.len(), 4);
    }

    #[test]
    fn even_site_reaches_one_output() {
        let (_, out) = regular_rulebook(&single(2, 4, 8, 8), 3, 2, 1);
        assert_eq!(out.keys, vec![(0, 1, 2)]);
    }

    #[test]
    fn empty_stays_empty() {
        let empty = Sites {
            batch: 2,
            height: 8,
            width: 8,
            keys: vec![],
        };
        let (book, out) = regular_rulebook(&empty, 3, 2, 1);
        assert!(out.is_empty() && book.rules.is_empty());
        assert_eq!((out.height, out.width), (4, 4));
    }

    /// Sparse conv then densify vs densify then dense conv.
    fn compare(seed: u64, h: usize, w: usize, density: f64, zero_bias: bool) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cin, cout, batch) = (3, 4, 2);
        let mut keys = Vec::new();
        for b in 0..batch {
            for r in 0..h {
                for c in 0..w {
                    if rng.gen_bool(density) {
                        keys.push((b as u32, r as u32, c as u32));
                    }
                }
            }
        }
        let sites = Sites { batch, height: h, width: w, keys };
        let feats: Vec<f64> = (0..sites.len() * cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wgt: Vec<f64> = (0..9 * cin * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..cout)
            .map(|_| if zero_bias { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let (book, out_sites) = regular_rulebook(&sites, 3, 2, 1);

        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[sites.len(), cin], feats);
        let wv = tape.input(&[3, 3, cin, cout], wgt);
        let bv = tape.input(&[cout], bias);
        let y = tape.sparse_conv(x, wv, bv, Arc::new(book));
        let out_cells = out_sites.dense_cells();
        let sparse = tape.scatter(y, Arc::new(out_cells.clone()), &[batch, out_sites.height, out_sites.width]);
        let dense_in = tape.scatter(x, Arc::new(sites.dense_cells()), &[batch, h, w]);
        let dense = tape.conv2d(dense_in, wv, bv, 2, 1);
        assert_eq!(tape.shape(sparse), tape.shape(dense));
        (tape.data(sparse).to_vec(), tape.data(dense).to_vec(), out_cells)
    }

    #[test]
    fn single_site_matches_dense_receptive_fields() {
        for (r, c) in [(0, 0), (3, 5), (7, 7), (4, 1)] {
            let sites = single(r, c, 8, 8);
            let (_, out) = regular_rulebook(&sites, 3, 2, 1);
            // Dense oracle: outputs whose 3×3 window (stride 2, pad 1) contains (r, c).
            let mut expect = Vec::new();
            for oy in 0..4u32 {
                for ox in 0..4u32 {
                    let (y0, x0) = (2 * oy as i64 - 1, 2 * ox as i64 - 1);
                    if (y0..y0 + 3).contains(&(r as i64)) && (x0..x0 + 3).contains(&(c as i64)) {
                        expect.push((0, oy, ox));
                    }
                }
            }
            assert!(out.keys.len() <= 4);
            assert_eq!(out.keys, expect);
        }
    }

    #[test]
    fn all_active_equals_dense() {
        let (s, d, _) = compare(9, 7, 6, 1.0, false);
        assert_eq!(s, d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sparse_equals_dense(seed in any::<u64>(), h in 1usize..20, w in 1usize..20, density in 0.0f64..0.6) {
            let (s, d, active) = compare(seed, h, w, density, true);
            prop_assert_eq!(&s, &d);
            let (s, d, active2) = compare(seed, h, w, density, false);
            prop_assert_eq!(&active, &active2);
            let cout = 4;
            for &cell in &active {
                for ch in 0..cout {
                    let i = cell * cout + ch;
                    prop_assert!((s[i] - d[i]).abs() <= 1e-12);
                }
            }
        }
    }
}
