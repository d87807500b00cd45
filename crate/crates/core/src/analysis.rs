//! Energy-compaction measurements: per-index mean coefficient energies
//! (DC / AC / total) and cumulative AC energy curves.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{rejected, Error, Result};
use crate::residuals::ResidualBlockSet;
use crate::training::FittedKernel;
use crate::transforms::{
    AffineOrthoKernel, BlockVector, CoefVector, KernelKind, KltKernel, TransformClass,
};

/// Blocks per partial sum; fixed so reductions are bit-stable.
const REDUCE_CHUNK: usize = 1024;

/// AC share of total energy below which a curve is undefined.
const DEGENERATE_AC: f64 = 1e-24;

/// Anything that maps a block to coefficients whose index 0 is the DC slot.
pub trait BlockTransform: Sync {
    fn n(&self) -> usize;
    fn label(&self) -> String;
    fn class(&self) -> TransformClass;
    /// Bias-free coefficients used for energy accounting.
    fn coefficients(&self, x: &BlockVector) -> Result<CoefVector>;
    fn is_dct(&self) -> bool {
        self.class() == TransformClass::Dct
    }
}

impl BlockTransform for AffineOrthoKernel {
    fn n(&self) -> usize {
        self.n
    }

    fn label(&self) -> String {
        AffineOrthoKernel::label(self)
    }

    fn class(&self) -> TransformClass {
        AffineOrthoKernel::class(self)
    }

    fn coefficients(&self, x: &BlockVector) -> Result<CoefVector> {
        self.coefficients_biasfree(x)
    }

    fn is_dct(&self) -> bool {
        self.kind == KernelKind::Dct
    }
}

impl BlockTransform for KltKernel {
    fn n(&self) -> usize {
        self.n
    }

    fn label(&self) -> String {
        "klt".to_string()
    }

    fn class(&self) -> TransformClass {
        TransformClass::Klt
    }

    fn coefficients(&self, x: &BlockVector) -> Result<CoefVector> {
        KltKernel::coefficients(self, x)
    }
}

impl BlockTransform for FittedKernel {
    fn n(&self) -> usize {
        FittedKernel::n(self)
    }

    fn label(&self) -> String {
        match self {
            FittedKernel::Affine(k) => BlockTransform::label(k),
            FittedKernel::Klt(k) => BlockTransform::label(k),
        }
    }

    fn class(&self) -> TransformClass {
        match self {
            FittedKernel::Affine(k) => BlockTransform::class(k),
            FittedKernel::Klt(k) => BlockTransform::class(k),
        }
    }

    fn coefficients(&self, x: &BlockVector) -> Result<CoefVector> {
        match self {
            FittedKernel::Affine(k) => BlockTransform::coefficients(k, x),
            FittedKernel::Klt(k) => BlockTransform::coefficients(k, x),
        }
    }

    fn is_dct(&self) -> bool {
        matches!(self, FittedKernel::Affine(k) if k.kind == KernelKind::Dct)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub label: String,
    pub class: TransformClass,
    pub n: usize,
    /// Mean squared coefficient per index over the block set.
    pub per_index: Vec<f64>,
    pub dc_energy: f64,
    pub ac_energy: f64,
    pub total_energy: f64,
    pub block_count: usize,
    pub source: String,
}

pub fn energy_table<K: BlockTransform + ?Sized>(
    kernel: &K,
    blocks: &ResidualBlockSet,
) -> Result<EnergyReport> {
    if kernel.n() != blocks.n {
        return Err(rejected(format!(
            "kernel side {} does not match block side {}",
            kernel.n(),
            blocks.n
        )));
    }
    if blocks.is_empty() {
        return Err(Error::InsufficientData("block set is empty".into()));
    }
    let dim = blocks.n * blocks.n;
    let partials = blocks
        .blocks
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut sums = vec![0.0; dim];
            for b in chunk {
                let c = kernel.coefficients(b)?;
                for (s, v) in sums.iter_mut().zip(&c.values) {
                    *s += v * v;
                }
            }
            Ok(sums)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_index = vec![0.0; dim];
    for p in &partials {
        for (t, v) in per_index.iter_mut().zip(p) {
            *t += v;
        }
    }
    let count = blocks.len() as f64;
    per_index.iter_mut().for_each(|v| *v /= count);

    let dc_energy = per_index[0];
    let ac_energy: f64 = per_index[1..].iter().sum();
    Ok(EnergyReport {
        label: kernel.label(),
        class: kernel.class(),
        n: blocks.n,
        per_index,
        dc_energy,
        ac_energy,
        total_energy: dc_energy + ac_energy,
        block_count: blocks.len(),
        source: blocks.provenance.source.clone(),
    })
}

/// Kernel with its energies replaced by mean coefficient energies measured on
/// `blocks`. Row layout is unchanged.
pub fn measure_energies(kernel: &AffineOrthoKernel, blocks: &ResidualBlockSet) -> Result<AffineOrthoKernel> {
    let report = energy_table(kernel, blocks)?;
    Ok(AffineOrthoKernel {
        energies: report.per_index,
        ..kernel.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Ordering {
    /// Kernel row order (eigen-order for Saab and KLT).
    Native,
    /// AC indices by measured mean energy, descending; ties by lower index.
    #[default]
    MeanEnergyDesc,
    /// Diagonal scan of the DCT frequency grid.
    Zigzag,
}

impl Ordering {
    pub fn as_str(self) -> &'static str {
        match self {
            Ordering::Native => "native",
            Ordering::MeanEnergyDesc => "energy",
            Ordering::Zigzag => "zigzag",
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "native" => Ok(Ordering::Native),
            "energy" | "mean_energy_desc" => Ok(Ordering::MeanEnergyDesc),
            "zigzag" => Ok(Ordering::Zigzag),
            _ => Err(rejected(format!("unknown ordering '{s}'"))),
        }
    }
}

/// JPEG-style diagonal scan of an `n x n` grid as lexicographic indices,
/// starting at DC.
pub fn zigzag_scan(n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n * n);
    for s in 0..(2 * n - 1) {
        let lo = s.saturating_sub(n - 1);
        let hi = s.min(n - 1);
        let rows: Box<dyn Iterator<Item = usize>> = if s % 2 == 1 {
            Box::new(lo..=hi)
        } else {
            Box::new((lo..=hi).rev())
        };
        for p in rows {
            out.push(p * n + (s - p));
        }
    }
    out
}

/// AC index order from per-index energies.
pub fn order_from_energies(
    per_index: &[f64],
    n: usize,
    strategy: Ordering,
    is_dct: bool,
) -> Result<Vec<usize>> {
    let dim = n * n;
    if per_index.len() != dim {
        return Err(rejected("energy vector length does not match block size"));
    }
    match strategy {
        Ordering::Native => Ok((1..dim).collect()),
        Ordering::MeanEnergyDesc => {
            let mut idx: Vec<usize> = (1..dim).collect();
            idx.sort_by(|&a, &b| per_index[b].total_cmp(&per_index[a]).then(a.cmp(&b)));
            Ok(idx)
        }
        Ordering::Zigzag => {
            if !is_dct {
                return Err(Error::InvalidStrategy(
                    "zigzag ordering applies only to DCT kernels".into(),
                ));
            }
            Ok(zigzag_scan(n).into_iter().skip(1).collect())
        }
    }
}

pub fn order_coeffs<K: BlockTransform + ?Sized>(
    kernel: &K,
    blocks: &ResidualBlockSet,
    strategy: Ordering,
) -> Result<Vec<usize>> {
    if strategy == Ordering::Zigzag && !kernel.is_dct() {
        return Err(Error::InvalidStrategy(format!(
            "zigzag ordering requested for {}",
            kernel.label()
        )));
    }
    let report = energy_table(kernel, blocks)?;
    order_from_energies(&report.per_index, report.n, strategy, kernel.is_dct())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompactionCurve {
    pub label: String,
    pub class: TransformClass,
    pub ordering: Ordering,
    pub n: usize,
    /// `E_K` in percent for `K = 1 ..= n^2 - 1`.
    pub values: Vec<f64>,
    pub source: String,
}

/// Cumulative AC energy of an energy report along `order`.
pub fn curve_from_report(report: &EnergyReport, order: &[usize], ordering: Ordering) -> Result<CompactionCurve> {
    let dim = report.n * report.n;
    let mut seen = vec![false; dim];
    if order.len() != dim - 1 || order.iter().any(|&i| i == 0 || i >= dim || std::mem::replace(&mut seen[i], true)) {
        return Err(rejected("order is not a permutation of the AC indices"));
    }
    let denom: f64 = report.per_index[1..].iter().sum();
    // rounding leaves ~1e-32 relative AC energy on flat blocks
    if !(denom > DEGENERATE_AC * report.total_energy) {
        return Err(Error::DegenerateData(format!(
            "{} has zero total AC energy",
            report.label
        )));
    }
    let mut acc = 0.0;
    let mut values: Vec<f64> = order
        .iter()
        .map(|&i| {
            acc += report.per_index[i];
            100.0 * acc / denom
        })
        .collect();
    // the full sum is the denominator, up to summation order
    if let Some(last) = values.last_mut() {
        *last = 100.0;
    }
    Ok(CompactionCurve {
        label: report.label.clone(),
        class: report.class,
        ordering,
        n: report.n,
        values,
        source: report.source.clone(),
    })
}

pub fn cumulative_ac_curve<K: BlockTransform + ?Sized>(
    kernel: &K,
    blocks: &ResidualBlockSet,
    ordering: Ordering,
) -> Result<CompactionCurve> {
    if ordering == Ordering::Zigzag && !kernel.is_dct() {
        return Err(Error::InvalidStrategy(format!(
            "zigzag ordering requested for {}",
            kernel.label()
        )));
    }
    let report = energy_table(kernel, blocks)?;
    let order = order_from_energies(&report.per_index, report.n, ordering, kernel.is_dct())?;
    curve_from_report(&report, &order, ordering)
}

/// Curves and tables over one block set, in report column order.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub curves: Vec<CompactionCurve>,
    pub tables: Vec<EnergyReport>,
}

fn fmt_value(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn compare_report(mut curves: Vec<CompactionCurve>, mut tables: Vec<EnergyReport>) -> Result<Comparison> {
    let mut sides = curves.iter().map(|c| c.n).chain(tables.iter().map(|t| t.n));
    if let Some(first) = sides.next() {
        if let Some(other) = sides.find(|&n| n != first) {
            return Err(rejected(format!("mixed block sizes {first} and {other}")));
        }
    }
    let mut sources = curves
        .iter()
        .map(|c| c.source.as_str())
        .chain(tables.iter().map(|t| t.source.as_str()));
    if let Some(first) = sources.next() {
        if let Some(other) = sources.find(|&s| s != first) {
            return Err(rejected(format!("mixed block sets '{first}' and '{other}'")));
        }
    }
    curves.sort_by(|a, b| (a.class, &a.label, a.ordering.as_str()).cmp(&(b.class, &b.label, b.ordering.as_str())));
    tables.sort_by(|a, b| (a.class, &a.label).cmp(&(b.class, &b.label)));
    Ok(Comparison { curves, tables })
}

impl Comparison {
    /// Long format: `transform,ordering,K,E_K_percent`.
    pub fn curve_csv(&self) -> String {
        let mut rows = vec![vec!["transform".into(), "ordering".into(), "K".into(), "E_K_percent".into()]];
        for c in &self.curves {
            for (k, v) in c.values.iter().enumerate() {
                rows.push(vec![c.label.clone(), c.ordering.to_string(), (k + 1).to_string(), fmt_value(*v)]);
            }
        }
        write_csv(rows)
    }

    /// Wide format: one row per `K`, one column per curve, and the largest
    /// pairwise gap between curves at that `K`.
    pub fn aligned_csv(&self) -> String {
        let mut header = vec!["K".to_string()];
        header.extend(self.curves.iter().map(|c| format!("{}:{}", c.label, c.ordering)));
        header.push("max_gap".into());
        let mut rows = vec![header];
        let len = self.curves.iter().map(|c| c.values.len()).max().unwrap_or(0);
        for k in 0..len {
            let vals: Vec<f64> = self.curves.iter().map(|c| c.values[k]).collect();
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let mut row = vec![(k + 1).to_string()];
            row.extend(vals.iter().map(|v| fmt_value(*v)));
            row.push(fmt_value(hi - lo));
            rows.push(row);
        }
        write_csv(rows)
    }

    /// `transform,index_class,energy` with classes DC, AC and TOTAL.
    pub fn table_csv(&self) -> String {
        let mut rows = vec![vec!["transform".into(), "index_class".into(), "energy".into()]];
        for t in &self.tables {
            for (class, v) in [("DC", t.dc_energy), ("AC", t.ac_energy), ("TOTAL", t.total_energy)] {
                rows.push(vec![t.label.clone(), class.into(), fmt_value(v)]);
            }
        }
        write_csv(rows)
    }

    /// Rows DC / AC / Total, one column per transform.
    pub fn table_summary(&self) -> String {
        let last = self.tables.first().map_or(0, |t| (t.n * t.n).saturating_sub(1));
        let mut header = vec!["energy".to_string(), "index".into()];
        header.extend(self.tables.iter().map(|t| t.label.clone()));
        let mut rows = vec![header];
        let getters: [(&str, String, fn(&EnergyReport) -> f64); 3] = [
            ("DC", "0".into(), |t| t.dc_energy),
            ("AC", format!("1~{last}"), |t| t.ac_energy),
            ("Total", format!("0~{last}"), |t| t.total_energy),
        ];
        for (name, idx, get) in getters {
            let mut row = vec![name.to_string(), idx];
            row.extend(self.tables.iter().map(|t| format!("{:.4}", get(t))));
            rows.push(row);
        }
        write_csv(rows)
    }
}

fn write_csv(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("fields are UTF-8")
}

/// One curve as read back from the long-format CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSeries {
    pub transform: String,
    pub ordering: Ordering,
    pub values: Vec<f64>,
}

impl From<&CompactionCurve> for CurveSeries {
    fn from(c: &CompactionCurve) -> Self {
        Self {
            transform: c.label.clone(),
            ordering: c.ordering,
            values: c.values.clone(),
        }
    }
}

/// Parses `transform,ordering,K,E_K_percent` rows back into series, in file order.
pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveSeries>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["transform", "ordering", "K", "E_K_percent"] {
        return Err(Error::Format(format!("unexpected curve header {headers:?}")));
    }
    let mut out: Vec<CurveSeries> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let ordering: Ordering = field(1).parse()?;
        let k: usize = field(2)
            .parse()
            .map_err(|_| Error::Format(format!("bad K '{}'", field(2))))?;
        let v: f64 = field(3)
            .parse()
            .map_err(|_| Error::Format(format!("bad E_K '{}'", field(3))))?;
        let start_new = !matches!(out.last(), Some(s) if s.transform == field(0) && s.ordering == ordering);
        if start_new {
            out.push(CurveSeries {
                transform: field(0).to_string(),
                ordering,
                values: Vec::new(),
            });
        }
        let series = out.last_mut().expect("series just pushed");
        if k != series.values.len() + 1 {
            return Err(Error::Format(format!("K out of sequence for {}", series.transform)));
        }
        series.values.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residuals::{synth_ar1, Channel, Provenance, ResidualMode};
    use crate::transforms::{dct_kernel, saab_fit_multistage, StagePlan};

    fn set_of(n: usize, blocks: Vec<Vec<f64>>) -> ResidualBlockSet {
        ResidualBlockSet::new(
            n,
            ResidualMode::Unlabeled,
            Channel::Gray,
            blocks.into_iter().map(|b| BlockVector::new(n, b).unwrap()).collect(),
            Provenance::default(),
        )
        .unwrap()
    }

    #[test]
    fn zigzag_for_four() {
        let pairs: Vec<(usize, usize)> = zigzag_scan(4).iter().skip(1).map(|i| (i / 4, i % 4)).collect();
        assert_eq!(
            pairs,
            vec![
                (0, 1), (1, 0), (2, 0), (1, 1), (0, 2), (0, 3), (1, 2), (2, 1),
                (3, 0), (3, 1), (2, 2), (1, 3), (2, 3), (3, 2), (3, 3)
            ]
        );
        let mut all = zigzag_scan(8);
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn ordering_strategies() {
        let e = [0.0, 5.0, 9.0, 1.0];
        assert_eq!(order_from_energies(&e, 2, Ordering::Native, false).unwrap(), vec![1, 2, 3]);
        assert_eq!(order_from_energies(&e, 2, Ordering::MeanEnergyDesc, false).unwrap(), vec![2, 1, 3]);
        let tied = [0.0, 1.0, 1.0, 1.0];
        assert_eq!(order_from_energies(&tied, 2, Ordering::MeanEnergyDesc, false).unwrap(), vec![1, 2, 3]);
        assert!(matches!(
            order_from_energies(&e, 2, Ordering::Zigzag, false),
            Err(Error::InvalidStrategy(_))
        ));
        assert_eq!(order_from_energies(&e, 2, Ordering::Zigzag, true).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn zigzag_rejected_for_saab() {
        let set = synth_ar1(0.9, 1.0, 4, 200, 1).unwrap();
        let fit = saab_fit_multistage(&set.blocks, &StagePlan::one_stage(4).unwrap(), 1.25).unwrap();
        assert!(matches!(
            cumulative_ac_curve(&fit.kernel, &set, Ordering::Zigzag),
            Err(Error::InvalidStrategy(_))
        ));
        assert!(order_coeffs(&fit.kernel, &set, Ordering::Zigzag).is_err());
        assert_eq!(order_coeffs(&fit.kernel, &set, Ordering::Native).unwrap(), (1..16).collect::<Vec<_>>());
    }

    #[test]
    fn energy_report_accounting() {
        let set = synth_ar1(0.8, 2.0, 4, 500, 2).unwrap();
        let r = energy_table(&dct_kernel(4).unwrap(), &set).unwrap();
        assert!((r.dc_energy + r.ac_energy - r.total_energy).abs() <= 1e-10 * r.total_energy);
        assert!(r.per_index.iter().all(|&v| v >= 0.0));
        let mean_sq: f64 = set.blocks.iter().map(BlockVector::energy).sum::<f64>() / 500.0;
        assert!((r.total_energy - mean_sq).abs() <= 1e-10 * mean_sq);
        assert!(energy_table(&dct_kernel(8).unwrap(), &set).is_err());
    }

    #[test]
    fn single_dominant_ac_coefficient() {
        let k = dct_kernel(4).unwrap();
        let row = k.row(6).to_vec();
        let set = set_of(4, vec![row.clone(), row.iter().map(|v| -2.0 * v).collect()]);
        let c = cumulative_ac_curve(&k, &set, Ordering::MeanEnergyDesc).unwrap();
        assert!((c.values[0] - 100.0).abs() < 1e-9);
        assert_eq!(c.values.len(), 15);
        assert_eq!(*c.values.last().unwrap(), 100.0);
    }

    #[test]
    fn zero_ac_energy_is_degenerate() {
        let set = set_of(2, vec![vec![1.0; 4], vec![3.0; 4]]);
        assert!(matches!(
            cumulative_ac_curve(&dct_kernel(2).unwrap(), &set, Ordering::Native),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn curves_are_scale_invariant_and_monotone() {
        let set = synth_ar1(0.9, 1.0, 4, 1000, 3).unwrap();
        let scaled = set.scaled(-7.5).unwrap();
        let k = dct_kernel(4).unwrap();
        for ord in [Ordering::Native, Ordering::MeanEnergyDesc, Ordering::Zigzag] {
            let a = cumulative_ac_curve(&k, &set, ord).unwrap();
            let b = cumulative_ac_curve(&k, &scaled, ord).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-10);
            }
            for w in a.values.windows(2) {
                assert!(w[1] >= w[0]);
            }
            assert!((a.values[14] - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn report_layout_and_validation() {
        let set = synth_ar1(0.9, 1.0, 4, 600, 4).unwrap();
        let dct = dct_kernel(4).unwrap();
        let fit = saab_fit_multistage(&set.blocks, &StagePlan::one_stage(4).unwrap(), 1.25).unwrap();
        let curves = vec![
            cumulative_ac_curve(&fit.kernel, &set, Ordering::MeanEnergyDesc).unwrap(),
            cumulative_ac_curve(&dct, &set, Ordering::MeanEnergyDesc).unwrap(),
        ];
        let tables = vec![energy_table(&fit.kernel, &set).unwrap(), energy_table(&dct, &set).unwrap()];
        let cmp = compare_report(curves, tables).unwrap();
        assert_eq!(cmp.curves[0].label, "dct");
        assert_eq!(cmp.tables[1].label, "saab[4x4]");

        let summary = cmp.table_summary();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], "energy,index,dct,saab[4x4]");
        let two = saab_fit_multistage(&set.blocks, &StagePlan::new(vec![2, 2]).unwrap(), 1.25).unwrap();
        let quoted = compare_report(Vec::new(), vec![energy_table(&two.kernel, &set).unwrap()]).unwrap();
        assert!(quoted.table_csv().contains("\"saab[2x2,2x2]\",DC,"));
        assert!(lines[1].starts_with("DC,0,"));
        assert!(lines[2].starts_with("AC,1~15,"));
        assert!(lines[3].starts_with("Total,0~15,"));

        let table = cmp.table_csv();
        assert_eq!(table.lines().count(), 7);
        assert!(table.lines().nth(1).unwrap().starts_with("dct,DC,"));

        let other = synth_ar1(0.9, 1.0, 8, 100, 4).unwrap();
        let mixed = vec![energy_table(&dct, &set).unwrap(), energy_table(&dct_kernel(8).unwrap(), &other).unwrap()];
        assert!(compare_report(Vec::new(), mixed).is_err());
    }

    #[test]
    fn identical_curves_have_zero_gap() {
        let set = synth_ar1(0.9, 1.0, 4, 300, 5).unwrap();
        let c = cumulative_ac_curve(&dct_kernel(4).unwrap(), &set, Ordering::Zigzag).unwrap();
        let cmp = compare_report(vec![c.clone(), c], Vec::new()).unwrap();
        for line in cmp.aligned_csv().lines().skip(1) {
            let gap: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(gap, 0.0);
        }
    }

    #[test]
    fn curve_csv_round_trip() {
        let set = synth_ar1(0.9, 1.0, 4, 300, 6).unwrap();
        let k = dct_kernel(4).unwrap();
        let curves = vec![
            cumulative_ac_curve(&k, &set, Ordering::Zigzag).unwrap(),
            cumulative_ac_curve(&k, &set, Ordering::MeanEnergyDesc).unwrap(),
        ];
        let cmp = compare_report(curves, Vec::new()).unwrap();
        let text = cmp.curve_csv();
        let parsed = parse_curve_csv(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        for (p, c) in parsed.iter().zip(&cmp.curves) {
            let orig = CurveSeries::from(c);
            assert_eq!(p.transform, orig.transform);
            assert_eq!(p.ordering, orig.ordering);
            for (a, b) in p.values.iter().zip(&orig.values) {
                assert!((a - b).abs() <= 1e-11 * b.abs().max(1e-300));
            }
        }
        // printed values are already at the emitted precision
        let reparsed = Comparison {
            curves: parsed
                .iter()
                .zip(&cmp.curves)
                .map(|(p, c)| CompactionCurve { values: p.values.clone(), ..c.clone() })
                .collect(),
            tables: Vec::new(),
        };
        assert_eq!(reparsed.curve_csv(), text);
        assert_eq!(parse_curve_csv(&reparsed.curve_csv()).unwrap(), parsed);
    }
}
