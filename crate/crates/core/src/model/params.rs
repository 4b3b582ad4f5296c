use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::{softplus, softplus_inv, Real};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Table<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!("{rows}x{cols} table data"), rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(T::zero());
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cast<U: Real>(&self) -> Table<U> {
        Table {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

/// Sizes that fix every table shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub num_entities: usize,
    /// Including inverse relations.
    pub num_relations: usize,
    pub visual_dim: usize,
    pub textual_dim: usize,
}

impl Dims {
    pub fn feature_dim(&self, slot: usize) -> usize {
        match slot {
            0 => self.visual_dim,
            _ => self.textual_dim,
        }
    }
}

/// Modality slots used throughout the model; they are also the quaternion
/// basis each modality lands on (`1` is the fused joint block).
pub const STRUCT: usize = 0;
pub const VISUAL: usize = 1;
pub const TEXTUAL: usize = 2;
pub const MODAL_NAMES: [&str; 3] = ["struct", "visual", "textual"];

/// Every learnable table.
///
/// Per-entity blocks are `2d` wide (`d` complex-real then `d` complex-imaginary).
/// Relations carry an `8d` translation and an `8d` rotation biquaternion and a
/// raw temperature whose softplus is the gate temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub dims: Dims,
    /// Structural modality-specific embedding, learned from scratch.
    pub ent_struct: Table<T>,
    /// Task-specific embeddings for struct, visual, textual and the joint block.
    pub task: [Table<T>; 4],
    /// Feature projections (visual, textual): weight `2d × d^m`, bias `1 × 2d`.
    pub proj_w: [Table<T>; 2],
    pub proj_b: [Table<T>; 2],
    /// Reconstruction networks, one per modality: `6d → 2d → 2d`, ReLU hidden.
    pub recon_w1: [Table<T>; 3],
    pub recon_b1: [Table<T>; 3],
    pub recon_w2: [Table<T>; 3],
    pub recon_b2: [Table<T>; 3],
    /// Gate maps `18d → 1`, input `[ê^m; r^T; r^R]`.
    pub gate_w: [Table<T>; 3],
    pub gate_b: [Table<T>; 3],
    pub rel_trans: Table<T>,
    pub rel_rot: Table<T>,
    pub rel_temp_raw: Table<T>,
}

pub const EMBED_INIT_BOUND: f64 = 0.05;

impl<T: Real> ModelParams<T> {
    /// All-zero tables of the right shapes (also the gradient accumulator).
    pub fn zeros(dims: Dims) -> Self {
        let Dims {
            d,
            num_entities: e,
            num_relations: r,
            visual_dim,
            textual_dim,
        } = dims;
        let z = Table::zeros;
        Self {
            dims,
            ent_struct: z(e, 2 * d),
            task: std::array::from_fn(|_| z(e, 2 * d)),
            proj_w: [z(2 * d, visual_dim), z(2 * d, textual_dim)],
            proj_b: std::array::from_fn(|_| z(1, 2 * d)),
            recon_w1: std::array::from_fn(|_| z(2 * d, 6 * d)),
            recon_b1: std::array::from_fn(|_| z(1, 2 * d)),
            recon_w2: std::array::from_fn(|_| z(2 * d, 2 * d)),
            recon_b2: std::array::from_fn(|_| z(1, 2 * d)),
            gate_w: std::array::from_fn(|_| z(1, 18 * d)),
            gate_b: std::array::from_fn(|_| z(1, 1)),
            rel_trans: z(r, 8 * d),
            rel_rot: z(r, 8 * d),
            rel_temp_raw: z(r, 1),
        }
    }

    /// Random initialization. Embedding tables are uniform in
    /// `±EMBED_INIT_BOUND`; affine weights uniform in `±1/sqrt(fan_in)`;
    /// biases zero; every temperature starts at 1. `pca` optionally replaces
    /// the visual and textual task tables.
    pub fn init(dims: Dims, rng: &mut ChaCha8Rng, pca: Option<[Table<T>; 2]>) -> Self {
        let Dims {
            d,
            num_entities: e,
            num_relations: r,
            visual_dim,
            textual_dim,
        } = dims;
        let b = EMBED_INIT_BOUND;
        let fan = |n: usize| 1.0 / (n.max(1) as f64).sqrt();
        let mut p = Self::zeros(dims);
        p.ent_struct = Table::uniform(e, 2 * d, b, rng);
        for t in p.task.iter_mut() {
            *t = Table::uniform(e, 2 * d, b, rng);
        }
        p.proj_w = [
            Table::uniform(2 * d, visual_dim, fan(visual_dim), rng),
            Table::uniform(2 * d, textual_dim, fan(textual_dim), rng),
        ];
        for m in 0..3 {
            p.recon_w1[m] = Table::uniform(2 * d, 6 * d, fan(6 * d), rng);
            p.recon_w2[m] = Table::uniform(2 * d, 2 * d, fan(2 * d), rng);
            p.gate_w[m] = Table::uniform(1, 18 * d, fan(18 * d), rng);
        }
        p.rel_trans = Table::uniform(r, 8 * d, b, rng);
        p.rel_rot = Table::uniform(r, 8 * d, b, rng);
        let raw = softplus_inv(T::one());
        p.rel_temp_raw.data.fill(raw);
        if let Some([v, t]) = pca {
            p.task[VISUAL] = v;
            p.task[TEXTUAL] = t;
        }
        p
    }

    /// Gate temperature `τ_r = softplus(raw_r)`.
    #[inline]
    pub fn temperature(&self, rel: usize) -> T {
        softplus(self.rel_temp_raw.data[rel])
    }

    /// Tables in a fixed order with stable names. Used by the optimizer, the
    /// checkpoint format and gradient checks.
    pub fn tables(&self) -> Vec<(String, &Table<T>)> {
        let mut out: Vec<(String, &Table<T>)> = vec![("ent_struct".into(), &self.ent_struct)];
        for (name, t) in ["task_struct", "task_visual", "task_textual", "task_joint"]
            .iter()
            .zip(&self.task)
        {
            out.push((name.to_string(), t));
        }
        for (k, name) in ["visual", "textual"].iter().enumerate() {
            out.push((format!("proj_w_{name}"), &self.proj_w[k]));
            out.push((format!("proj_b_{name}"), &self.proj_b[k]));
        }
        for (m, name) in MODAL_NAMES.iter().enumerate() {
            out.push((format!("recon_w1_{name}"), &self.recon_w1[m]));
            out.push((format!("recon_b1_{name}"), &self.recon_b1[m]));
            out.push((format!("recon_w2_{name}"), &self.recon_w2[m]));
            out.push((format!("recon_b2_{name}"), &self.recon_b2[m]));
        }
        for (m, name) in MODAL_NAMES.iter().enumerate() {
            out.push((format!("gate_w_{name}"), &self.gate_w[m]));
            out.push((format!("gate_b_{name}"), &self.gate_b[m]));
        }
        out.push(("rel_trans".into(), &self.rel_trans));
        out.push(("rel_rot".into(), &self.rel_rot));
        out.push(("rel_temp_raw".into(), &self.rel_temp_raw));
        out
    }

    /// Mutable counterpart of [`ModelParams::tables`], same order.
    pub fn tables_mut(&mut self) -> Vec<&mut Table<T>> {
        let mut out: Vec<&mut Table<T>> = vec![&mut self.ent_struct];
        out.extend(self.task.iter_mut());
        let [pw0, pw1] = &mut self.proj_w;
        let [pb0, pb1] = &mut self.proj_b;
        out.extend([pw0, pb0, pw1, pb1]);
        for (((w1, b1), w2), b2) in self
            .recon_w1
            .iter_mut()
            .zip(self.recon_b1.iter_mut())
            .zip(self.recon_w2.iter_mut())
            .zip(self.recon_b2.iter_mut())
        {
            out.extend([w1, b1, w2, b2]);
        }
        for (w, b) in self.gate_w.iter_mut().zip(self.gate_b.iter_mut()) {
            out.extend([w, b]);
        }
        out.push(&mut self.rel_trans);
        out.push(&mut self.rel_rot);
        out.push(&mut self.rel_temp_raw);
        out
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(self.dims);
        for (dst, (_, src)) in out.tables_mut().into_iter().zip(self.tables()) {
            *dst = src.cast();
        }
        out
    }

    pub fn fill_zero(&mut self) {
        for t in self.tables_mut() {
            t.fill_zero();
        }
    }

    /// Name of the first table holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tables()
            .into_iter()
            .find(|(_, t)| t.data.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn dims() -> Dims {
        Dims {
            d: 2,
            num_entities: 5,
            num_relations: 4,
            visual_dim: 3,
            textual_dim: 7,
        }
    }

    #[test]
    fn shapes_follow_dims() {
        let p = ModelParams::<f64>::init(dims(), &mut stream(1, Stream::Init), None);
        assert_eq!(p.ent_struct.shape(), (5, 4));
        assert_eq!(p.proj_w[1].shape(), (4, 7));
        assert_eq!(p.recon_w1[0].shape(), (4, 12));
        assert_eq!(p.gate_w[2].shape(), (1, 36));
        assert_eq!(p.rel_rot.shape(), (4, 16));
        for r in 0..4 {
            assert!((p.temperature(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn table_lists_agree() {
        let mut p = ModelParams::<f32>::init(dims(), &mut stream(1, Stream::Init), None);
        let shapes: Vec<_> = p.tables().iter().map(|(_, t)| t.shape()).collect();
        let shapes_mut: Vec<_> = p.tables_mut().iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, shapes_mut);
        let names: std::collections::HashSet<_> = p.tables().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), shapes.len());
    }

    #[test]
    fn cast_round_trip_through_f64() {
        let p = ModelParams::<f32>::init(dims(), &mut stream(3, Stream::Init), None);
        assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    }
}
