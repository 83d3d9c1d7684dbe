//! Square QAM alphabets, Gray labelling, complex-to-real stacking and hard
//! decisions.

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, RMat, RVec, C64};

/// A regular square QAM constellation with unit average symbol power.
///
/// Symbol `k` has real-axis PAM index `k / M` and imaginary-axis PAM index
/// `k % M`, where `M = 2^(b/2)`. Its bit label is the reflected-binary Gray
/// code of the real index followed by that of the imaginary index, MSB first.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<C64>,
    pam_levels: Vec<f64>,
    bits_per_symbol: u32,
    gray_map: Vec<u32>,
}

fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

impl Constellation {
    /// Square `2^b`-QAM for even `b >= 2`.
    pub fn square_qam(bits_per_symbol: u32) -> Result<Self> {
        if bits_per_symbol == 0 || bits_per_symbol % 2 != 0 || bits_per_symbol > 16 {
            return Err(Error::InvalidParameter(format!(
                "square QAM needs an even number of bits per symbol in 2..=16, got {bits_per_symbol}"
            )));
        }
        let m = 1usize << (bits_per_symbol / 2);
        let mf = m as f64;
        let scale = (3.0 / (2.0 * (mf * mf - 1.0))).sqrt();
        let pam_levels: Vec<f64> = (0..m).map(|i| (2.0 * i as f64 - (mf - 1.0)) * scale).collect();
        let half = bits_per_symbol / 2;
        let mut points = Vec::with_capacity(m * m);
        let mut gray_map = Vec::with_capacity(m * m);
        for re in 0..m {
            for im in 0..m {
                points.push(C64::new(pam_levels[re], pam_levels[im]));
                gray_map.push((gray(re as u32) << half) | gray(im as u32));
            }
        }
        Ok(Self { points, pam_levels, bits_per_symbol, gray_map })
    }

    pub fn qpsk() -> Self {
        Self::square_qam(2).expect("QPSK is a valid square QAM")
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn pam_levels(&self) -> &[f64] {
        &self.pam_levels
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Bit label of symbol `index`.
    pub fn label(&self, index: usize) -> u32 {
        self.gray_map[index]
    }

    /// Symbol index carrying bit label `label`.
    pub fn index_of_label(&self, label: u32) -> Option<usize> {
        self.gray_map.iter().position(|&g| g == label)
    }

    fn levels_per_axis(&self) -> usize {
        self.pam_levels.len()
    }

    /// Index of the PAM level nearest to `x`; ties go to the smaller level.
    pub fn nearest_level(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_d = (x - self.pam_levels[0]).abs();
        for (i, &p) in self.pam_levels.iter().enumerate().skip(1) {
            let d = (x - p).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Symbol index built from real- and imaginary-axis PAM indices.
    pub fn index_from_levels(&self, re: usize, im: usize) -> usize {
        re * self.levels_per_axis() + im
    }

    /// Hard decision on a real-stacked estimate `[Re; Im]` of length `2 Nt`.
    pub fn slice(&self, s_real: &RVec) -> Result<Decision> {
        if s_real.len() % 2 != 0 {
            return Err(Error::Dimension(format!("stacked vector has odd length {}", s_real.len())));
        }
        let nt = s_real.len() / 2;
        let indices: Vec<usize> = (0..nt)
            .map(|j| {
                let re = self.nearest_level(s_real[j]);
                let im = self.nearest_level(s_real[j + nt]);
                self.index_from_levels(re, im)
            })
            .collect();
        Ok(Decision::new(self, indices))
    }

    /// Complex symbol vector for the given indices.
    pub fn symbols(&self, indices: &[usize]) -> CVec {
        CVec::from_iterator(indices.len(), indices.iter().map(|&k| self.points[k]))
    }

    /// Number of differing bits between the labels of two symbols.
    pub fn bit_distance(&self, a: usize, b: usize) -> u32 {
        (self.gray_map[a] ^ self.gray_map[b]).count_ones()
    }

    /// Bits carried by a sequence of symbols, MSB of each label first.
    pub fn bits(&self, indices: &[usize]) -> Vec<u8> {
        let b = self.bits_per_symbol;
        indices
            .iter()
            .flat_map(|&k| {
                let label = self.gray_map[k];
                (0..b).rev().map(move |i| ((label >> i) & 1) as u8)
            })
            .collect()
    }

    /// Mean of `|c|^2` over the alphabet.
    pub fn average_power(&self) -> f64 {
        self.points.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }
}

pub fn make_qpsk() -> Constellation {
    Constellation::qpsk()
}

/// Hard-decision output: symbol indices and the symbols themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub indices: Vec<usize>,
    pub symbols: CVec,
}

impl Decision {
    pub fn new(con: &Constellation, indices: Vec<usize>) -> Self {
        let symbols = con.symbols(&indices);
        Self { indices, symbols }
    }

    pub fn bits(&self, con: &Constellation) -> Vec<u8> {
        con.bits(&self.indices)
    }

    /// Bit errors against the transmitted indices.
    pub fn bit_errors(&self, con: &Constellation, truth: &[usize]) -> u64 {
        self.indices.iter().zip(truth).map(|(&a, &b)| con.bit_distance(a, b) as u64).sum()
    }

    pub fn symbol_errors(&self, truth: &[usize]) -> u64 {
        self.indices.iter().zip(truth).filter(|(a, b)| a != b).count() as u64
    }
}

/// `[Re{x}; Im{x}]`.
pub fn stack_vec(x: &CVec) -> RVec {
    let n = x.len();
    RVec::from_fn(2 * n, |i, _| if i < n { x[i].re } else { x[i - n].im })
}

/// Inverse of [`stack_vec`].
pub fn unstack_vec(x: &RVec) -> Result<CVec> {
    if x.len() % 2 != 0 {
        return Err(Error::Dimension(format!("stacked vector has odd length {}", x.len())));
    }
    let n = x.len() / 2;
    Ok(CVec::from_fn(n, |i, _| C64::new(x[i], x[i + n])))
}

/// `[[Re{A}, -Im{A}], [Im{A}, Re{A}]]`.
pub fn stack_mat(a: &CMat) -> RMat {
    let (r, c) = a.shape();
    RMat::from_fn(2 * r, 2 * c, |i, j| {
        let z = a[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// The real-valued observation model `y = H s + n` in stacked form.
#[derive(Debug, Clone, PartialEq)]
pub struct RealLinearModel {
    pub y: RVec,
    pub h: RMat,
}

impl RealLinearModel {
    pub fn new(y: RVec, h: RMat) -> Result<Self> {
        if y.len() != h.nrows() || y.len() % 2 != 0 || h.ncols() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "real model: y has length {}, H is {}x{}",
                y.len(),
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(Self { y, h })
    }

    /// Stacks a complex observation `y_c = H_c s + n`.
    pub fn from_complex(y: &CVec, h: &CMat) -> Result<Self> {
        Ok(stack_real(y, h, None)?.0)
    }

    pub fn nt(&self) -> usize {
        self.h.ncols() / 2
    }

    pub fn nr(&self) -> usize {
        self.h.nrows() / 2
    }
}

/// Stacks `(y, H, s)` into the real domain, checking that `H` is `Nr x Nt`.
pub fn stack_real(y: &CVec, h: &CMat, s: Option<&CVec>) -> Result<(RealLinearModel, Option<RVec>)> {
    if y.len() != h.nrows() {
        return Err(Error::Dimension(format!("y has length {} but H has {} rows", y.len(), h.nrows())));
    }
    if let Some(s) = s {
        if s.len() != h.ncols() {
            return Err(Error::Dimension(format!(
                "s has length {} but H has {} columns",
                s.len(),
                h.ncols()
            )));
        }
    }
    let model = RealLinearModel { y: stack_vec(y), h: stack_mat(h) };
    Ok((model, s.map(stack_vec)))
}
