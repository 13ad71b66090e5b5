use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::nn::{ParamId, ParamStore, Rulebook, Scalar, Tape, Var};

use super::sparse::{regular_rulebook, Sites};
use super::{pillarize, EncoderConfig, PillarConfig, PointCloud, SparseBEVGrid, PILLAR_FEATURES};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvBlock {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl ConvBlock {
    /// 3×3 kernel `[3, 3, cin, cout]`, init U(±1/√(9·cin)).
    fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / ((9 * cin) as f64).sqrt();
        let weight = store.register_uniform(format!("{name}.weight"), &[3, 3, cin, cout], bound, rng)?;
        let bias = store.register_uniform(format!("{name}.bias"), &[cout], bound, rng)?;
        Ok(Self {
            weight,
            bias,
            cin,
            cout,
        })
    }

    fn vars<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, frozen: bool) -> (Var, Var) {
        if frozen {
            (tape.param_frozen(store, self.weight), tape.param_frozen(store, self.bias))
        } else {
            (tape.param(store, self.weight), tape.param(store, self.bias))
        }
    }
}

/// Weight-independent structure of a batch: pillar features and one
/// rulebook per sparse stage.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub batch: usize,
    pub features: Vec<f32>,
    pub books: Vec<Arc<Rulebook>>,
    /// Active sites after the last sparse stage.
    pub out_sites: Sites,
    pub out_cells: Arc<Vec<usize>>,
}

impl PreparedBatch {
    pub fn from_grids(grids: &[SparseBEVGrid], stages: usize) -> Self {
        let (h, w) = grids.first().map_or((1, 1), |g| (g.height, g.width));
        let mut keys = Vec::new();
        let mut features = Vec::new();
        for (b, g) in grids.iter().enumerate() {
            assert_eq!((g.height, g.width), (h, w), "grids in a batch must share dims");
            for (&(r, c), p) in &g.cells {
                keys.push((b as u32, r, c));
                features.extend_from_slice(&p.features);
            }
        }
        let mut sites = Sites {
            batch: grids.len(),
            height: h,
            width: w,
            keys,
        };
        let mut books = Vec::with_capacity(stages);
        for _ in 0..stages {
            let (book, next) = regular_rulebook(&sites, 3, 2, 1);
            books.push(Arc::new(book));
            sites = next;
        }
        Self {
            batch: grids.len(),
            features,
            out_cells: Arc::new(sites.dense_cells()),
            out_sites: sites,
            books,
        }
    }
}

/// Output of [`BevEncoder::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// Dense map `[B, H', W', C]`.
    pub feature_map: Var,
    /// Global max-pool of the map, `[B, C]`.
    pub latent: Var,
}

/// Pillar grid → stride-2 sparse blocks → densify → dense blocks → global
/// max-pool.
#[derive(Clone, Debug, PartialEq)]
pub struct BevEncoder {
    pub pillar: PillarConfig,
    pub config: EncoderConfig,
    pub sparse: Vec<ConvBlock>,
    pub dense: Vec<ConvBlock>,
}

impl BevEncoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        pillar: PillarConfig,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        pillar.validate()?;
        config.validate()?;
        let mut cin = PILLAR_FEATURES;
        let mut sparse = Vec::new();
        for (i, &cout) in config.sparse_channels.iter().enumerate() {
            sparse.push(ConvBlock::new(store, &format!("{name}.sparse{i}"), cin, cout, rng)?);
            cin = cout;
        }
        let mut dense = Vec::new();
        for i in 0..config.dense_blocks {
            dense.push(ConvBlock::new(store, &format!("{name}.dense{i}"), cin, config.dense_channels, rng)?);
            cin = config.dense_channels;
        }
        Ok(Self {
            pillar,
            config,
            sparse,
            dense,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    /// `(H', W')` of the dense feature map.
    pub fn output_dims(&self) -> (usize, usize) {
        let grid = self.pillar.dims().expect("validated at construction");
        self.config.output_dims(grid)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.sparse
            .iter()
            .chain(&self.dense)
            .flat_map(|b| [b.weight, b.bias])
            .collect()
    }

    pub fn prepare(&self, clouds: &[&PointCloud]) -> Result<PreparedBatch> {
        let grids = clouds
            .iter()
            .map(|c| pillarize(c, &self.pillar))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.prepare_grids(&grids))
    }

    pub fn prepare_grids(&self, grids: &[SparseBEVGrid]) -> PreparedBatch {
        PreparedBatch::from_grids(grids, self.sparse.len())
    }

    /// With `frozen`, encoder weights enter the tape as constants.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        batch: &PreparedBatch,
        frozen: bool,
    ) -> Encoded {
        let n_in = batch.features.len() / PILLAR_FEATURES;
        let feats = batch.features.iter().map(|&v| T::lit(v as f64)).collect();
        let mut x = tape.input(&[n_in, PILLAR_FEATURES], feats);
        for (block, book) in self.sparse.iter().zip(&batch.books) {
            let (w, b) = block.vars(tape, store, frozen);
            let y = tape.sparse_conv(x, w, b, Arc::clone(book));
            x = tape.relu(y);
        }
        let s = &batch.out_sites;
        let mut map = tape.scatter(x, Arc::clone(&batch.out_cells), &[batch.batch, s.height, s.width]);
        for block in &self.dense {
            let (w, b) = block.vars(tape, store, frozen);
            let y = tape.conv2d(map, w, b, 1, 1);
            map = tape.relu(y);
        }
        let latent = tape.global_max_pool(map);
        Encoded {
            feature_map: map,
            latent,
        }
    }
}
