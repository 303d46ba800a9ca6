//! Target measures, the cap height and the capped (extended) problem.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::{SeparableCost, TargetBox, TargetPoint};
use crate::error::{Error, Result};

/// Number of uniform nodes (endpoints included) used to certify `M` and `P`.
pub const CAP_GRID_NODES: usize = 4096;
/// Relative inflation applied to the grid-certified cap height.
pub const CAP_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureFormat {
    Csv,
    Json,
}

impl MeasureFormat {
    /// Format implied by a file extension (`.json` or anything else as CSV).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => MeasureFormat::Json,
            _ => MeasureFormat::Csv,
        }
    }
}

/// `ν = Σ mᵢ δ_{yᵢ}` over `(z, θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    points: Vec<TargetPoint>,
    masses: Vec<f64>,
}

#[derive(Deserialize)]
struct CsvRow {
    z: f64,
    theta: f64,
    mass: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonMeasure {
    points: Vec<[f64; 2]>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates and, when the total is within `1e-6` of one, renormalises.
    pub fn new(points: Vec<TargetPoint>, mut masses: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("measure has no atoms".into()));
        }
        if points.len() != masses.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} points but {} masses",
                points.len(),
                masses.len()
            )));
        }
        for (i, (p, &m)) in points.iter().zip(&masses).enumerate() {
            if !(p.z.is_finite() && p.theta.is_finite() && p.z > 0.0 && p.theta > 0.0) {
                return Err(Error::InvalidMeasure(format!(
                    "atom {i}: coordinates must be positive, got ({}, {})",
                    p.z, p.theta
                )));
            }
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidMeasure(format!("atom {i}: nonpositive mass {m}")));
            }
        }
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| cmp_point(points[a], points[b]));
        for w in idx.windows(2) {
            if points[w[0]] == points[w[1]] {
                return Err(Error::InvalidMeasure(format!(
                    "duplicate points: atoms {} and {} at ({}, {})",
                    w[0].min(w[1]),
                    w[0].max(w[1]),
                    points[w[0]].z,
                    points[w[0]].theta
                )));
            }
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidMeasure(format!("masses sum to {total}, expected 1")));
        }
        // Renormalise only when the invariant is not already met, so that
        // an exported measure reloads bit for bit.
        if (total - 1.0).abs() > 1e-12 {
            for m in &mut masses {
                *m /= total;
            }
        }
        Ok(DiscreteMeasure { points, masses })
    }

    pub fn points(&self) -> &[TargetPoint] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_mass(&self) -> f64 {
        self.masses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn bounding_box(&self) -> Result<TargetBox> {
        TargetBox::bounding(&self.points)
    }

    /// Same atoms, listed in the order given by `perm` (`perm[k]` is the old index).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let points = perm.iter().map(|&i| self.points[i]).collect();
        let masses = perm.iter().map(|&i| self.masses[i]).collect();
        DiscreteMeasure::new(points, masses)
    }

    pub fn load<R: Read>(reader: R, format: MeasureFormat) -> Result<Self> {
        match format {
            MeasureFormat::Csv => {
                let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
                let mut points = Vec::new();
                let mut masses = Vec::new();
                for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
                    let row = row.map_err(|e| Error::Parse(format!("measure CSV row {}: {e}", line + 1)))?;
                    points.push(TargetPoint::new(row.z, row.theta));
                    masses.push(row.mass);
                }
                DiscreteMeasure::new(points, masses)
            }
            MeasureFormat::Json => {
                let raw: JsonMeasure =
                    serde_json::from_reader(reader).map_err(|e| Error::Parse(format!("measure JSON: {e}")))?;
                let points = raw.points.iter().map(|p| TargetPoint::new(p[0], p[1])).collect();
                DiscreteMeasure::new(points, raw.masses)
            }
        }
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file), MeasureFormat::from_path(path))
    }

    /// Writes the measure with shortest round-trip float formatting.
    pub fn export<W: Write>(&self, mut writer: W, format: MeasureFormat) -> Result<()> {
        match format {
            MeasureFormat::Csv => {
                writeln!(writer, "z,theta,mass")?;
                for (p, m) in self.points.iter().zip(&self.masses) {
                    writeln!(writer, "{:?},{:?},{:?}", p.z, p.theta, m)?;
                }
            }
            MeasureFormat::Json => {
                let raw = JsonMeasure {
                    points: self.points.iter().map(|p| [p.z, p.theta]).collect(),
                    masses: self.masses.clone(),
                };
                serde_json::to_writer(&mut writer, &raw)?;
                writeln!(writer)?;
            }
        }
        Ok(())
    }
}

fn cmp_point(a: TargetPoint, b: TargetPoint) -> Ordering {
    a.z.total_cmp(&b.z).then(a.theta.total_cmp(&b.theta))
}

/// Nodes on which `M` and `P` are certified: a uniform grid plus each atom's
/// critical point of `g`, clamped into `B`.
fn cap_nodes(cost: &SeparableCost, nu: &DiscreteMeasure) -> Vec<f64> {
    let b = cost.domain();
    let mut nodes: Vec<f64> = b.linspace(CAP_GRID_NODES).collect();
    nodes.extend(
        nu.points()
            .iter()
            .filter_map(|&y| cost.g_argmin(y))
            .map(|s| s.clamp(b.lo, b.hi)),
    );
    nodes
}

/// `M = max c((s, r), yᵢ)` over the certification nodes, with `r = 1/|B|`.
pub fn cap_level(cost: &SeparableCost, nu: &DiscreteMeasure) -> f64 {
    let r = 1.0 / cost.domain().len();
    let nodes = cap_nodes(cost, nu);
    let mut big_m = f64::NEG_INFINITY;
    for &y in nu.points() {
        for &s in &nodes {
            big_m = big_m.max(cost.c(s, r, y));
        }
    }
    big_m
}

/// Cap height before the safety margin: `max q(s, yᵢ, M)` over the nodes.
pub fn compute_p_cap_unscaled(cost: &SeparableCost, nu: &DiscreteMeasure) -> f64 {
    let big_m = cap_level(cost, nu);
    let nodes = cap_nodes(cost, nu);
    let mut p = 0.0f64;
    for &y in nu.points() {
        for &s in &nodes {
            p = p.max(cost.q(s, y, big_m));
        }
    }
    p
}

/// Height `P` bounding every candidate surface.
pub fn compute_p_cap(cost: &SeparableCost, nu: &DiscreteMeasure) -> f64 {
    (1.0 + CAP_MARGIN) * compute_p_cap_unscaled(cost, nu)
}

/// Capped strip `B × [0, P]` with target `ν + (P|B| − 1) δ_ŷ`, where `ŷ` is a
/// zero-cost reservoir label.
///
/// Atoms are also kept in a canonical order (slope descending, then `z`, then
/// `θ`) so that all per-column work is independent of the input order.
#[derive(Debug, Clone)]
pub struct ExtendedProblem {
    cost: SeparableCost,
    nu: DiscreteMeasure,
    p_cap: f64,
    reservoir_mass: f64,
    order: Vec<usize>,
}

impl ExtendedProblem {
    /// Computes `P` and builds the extended problem.
    pub fn new(cost: SeparableCost, nu: DiscreteMeasure) -> Result<Self> {
        let p_cap = compute_p_cap(&cost, &nu);
        extend(cost, nu, p_cap)
    }

    pub fn cost(&self) -> &SeparableCost {
        &self.cost
    }

    pub fn nu(&self) -> &DiscreteMeasure {
        &self.nu
    }

    pub fn n(&self) -> usize {
        self.nu.len()
    }

    pub fn p_cap(&self) -> f64 {
        self.p_cap
    }

    pub fn reservoir_mass(&self) -> f64 {
        self.reservoir_mass
    }

    /// `P · |B|`, the total extended mass.
    pub fn strip_area(&self) -> f64 {
        self.p_cap * self.cost.domain().len()
    }

    /// Canonical order: `order()[r]` is the atom index of rank `r`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Extended target masses `(m₁, …, mₙ, P|B| − 1)`.
    pub fn extended_masses(&self) -> Vec<f64> {
        let mut m = self.nu.masses().to_vec();
        m.push(self.reservoir_mass);
        m
    }

    /// Smallest extended mass, the scale of the convergence tolerance.
    pub fn min_extended_mass(&self) -> f64 {
        self.nu.min_mass().min(self.reservoir_mass)
    }
}

/// Builds the extended problem for a given cap height.
pub fn extend(cost: SeparableCost, nu: DiscreteMeasure, p_cap: f64) -> Result<ExtendedProblem> {
    let ybox = cost.target_box();
    if let Some((i, y)) = nu.points().iter().enumerate().find(|(_, y)| !ybox.contains(**y)) {
        return Err(Error::InvalidMeasure(format!("atom {i} at ({}, {}) lies outside the target box", y.z, y.theta)));
    }
    if !p_cap.is_finite() {
        return Err(Error::Internal(format!("cap height is not finite: {p_cap}")));
    }
    let reservoir_mass = p_cap * cost.domain().len() - 1.0;
    if reservoir_mass <= 0.0 {
        return Err(Error::Internal(format!("cap height {p_cap} too small: reservoir mass {reservoir_mass}")));
    }
    let mut order: Vec<usize> = (0..nu.len()).collect();
    let pts = nu.points();
    order.sort_by(|&a, &b| {
        cost.w(pts[b]).total_cmp(&cost.w(pts[a])).then(cmp_point(pts[a], pts[b]))
    });
    Ok(ExtendedProblem { cost, nu, p_cap, reservoir_mass, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostConstants, CostKind, Interval};

    fn sg2d(lo: f64, hi: f64, nu: &DiscreteMeasure) -> SeparableCost {
        SeparableCost::sg2d(Interval::new(lo, hi).unwrap(), nu.bounding_box().unwrap()).unwrap()
    }

    fn single() -> DiscreteMeasure {
        DiscreteMeasure::new(vec![TargetPoint::new(0.5, 1.0)], vec![1.0]).unwrap()
    }

    #[test]
    fn csv_single_atom() {
        let nu = DiscreteMeasure::load("z,theta,mass\n1.6,1.0,1.0".as_bytes(), MeasureFormat::Csv).unwrap();
        assert_eq!(nu.points(), &[TargetPoint::new(1.6, 1.0)]);
        assert_eq!(nu.masses(), &[1.0]);
    }

    #[test]
    fn csv_three_atoms_any_column_order() {
        let src = "mass,z,theta\n0.3,1,1\n0.3,2,1\n0.4,1,2\n";
        let nu = DiscreteMeasure::load(src.as_bytes(), MeasureFormat::Csv).unwrap();
        assert_eq!(nu.len(), 3);
        assert_eq!(nu.points()[2], TargetPoint::new(1.0, 2.0));
    }

    #[test]
    fn csv_rejects_bad_input() {
        let zero = DiscreteMeasure::load("z,theta,mass\n1,1,0\n2,1,1\n".as_bytes(), MeasureFormat::Csv);
        match zero {
            Err(Error::InvalidMeasure(msg)) => assert!(msg.contains("nonpositive mass"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let dup = DiscreteMeasure::load("z,theta,mass\n1,1,0.5\n1,1,0.5\n".as_bytes(), MeasureFormat::Csv);
        assert!(matches!(dup, Err(Error::InvalidMeasure(_))));
        let sum = DiscreteMeasure::load("z,theta,mass\n1,1,0.5\n2,1,0.4\n".as_bytes(), MeasureFormat::Csv);
        assert!(matches!(sum, Err(Error::InvalidMeasure(_))));
        let junk = DiscreteMeasure::load("z,theta,mass\n1,abc,1\n".as_bytes(), MeasureFormat::Csv);
        assert!(matches!(junk, Err(Error::Parse(_))));
        let missing = DiscreteMeasure::load("z,mass\n1,1\n".as_bytes(), MeasureFormat::Csv);
        assert!(matches!(missing, Err(Error::Parse(_))));
        let neg = DiscreteMeasure::load("z,theta,mass\n-1,1,1\n".as_bytes(), MeasureFormat::Csv);
        assert!(matches!(neg, Err(Error::InvalidMeasure(_))));
    }

    #[test]
    fn near_unit_masses_renormalised() {
        let nu = DiscreteMeasure::new(
            vec![TargetPoint::new(1.0, 1.0), TargetPoint::new(2.0, 1.0)],
            vec![0.5, 0.5000004],
        )
        .unwrap();
        assert!((nu.masses().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_roundtrip() {
        let nu = DiscreteMeasure::new(
            vec![TargetPoint::new(1.25, 0.7), TargetPoint::new(0.1, 3.0)],
            vec![0.1 + 0.2, 0.7],
        )
        .unwrap();
        let mut buf = Vec::new();
        nu.export(&mut buf, MeasureFormat::Json).unwrap();
        assert_eq!(DiscreteMeasure::load(buf.as_slice(), MeasureFormat::Json).unwrap(), nu);
    }

    #[test]
    fn cap_for_worked_instance() {
        let nu = single();
        let cost = sg2d(0.0, 1.0, &nu);
        assert!((cap_level(&cost, &nu) - 1.125).abs() < 1e-15);
        assert!((compute_p_cap_unscaled(&cost, &nu) - 1.125).abs() < 1e-15);
        let prob = ExtendedProblem::new(cost, nu).unwrap();
        assert!((prob.p_cap() - 1.125 * 1.05).abs() < 1e-14);
    }

    #[test]
    fn reservoir_mass_from_area() {
        let nu = single();
        let p = extend(sg2d(0.0, 1.0, &nu), nu.clone(), 1.125).unwrap();
        assert!((p.reservoir_mass() - 0.125).abs() < 1e-15);
        let p = extend(sg2d(0.1, 0.9, &nu), nu.clone(), 2.0).unwrap();
        assert!((p.reservoir_mass() - 0.6).abs() < 1e-15);
        assert!((p.extended_masses().iter().sum::<f64>() - p.strip_area()).abs() < 1e-12);
        let tiny = extend(sg2d(0.0, 1.0, &nu), nu.clone(), 1.0 + 1e-9).unwrap();
        assert!(tiny.reservoir_mass() > 0.0 && tiny.reservoir_mass() < 1e-8);
        assert!(matches!(extend(sg2d(0.0, 1.0, &nu), nu, 1.0), Err(Error::Internal(_))));
    }

    #[test]
    fn mlm_single_atom_cap_is_finite() {
        let c = CostConstants { a: 2.0, omega: 1.0, cp: 1.0, p_min: 1.0, p_r: 1.0, kappa: 2.0 / 7.0 };
        let nu = DiscreteMeasure::new(vec![TargetPoint::new(1.6, 1.0)], vec![1.0]).unwrap();
        let cost = SeparableCost::new(CostKind::Mlm(c), Interval::new(0.1, 0.9).unwrap(), nu.bounding_box().unwrap())
            .unwrap();
        let p = compute_p_cap(&cost, &nu);
        assert!(p.is_finite() && p > 1.0 / 0.8, "{p}");
    }

    #[test]
    fn canonical_order_sorts_by_slope() {
        let pts = vec![TargetPoint::new(1.0, 1.0), TargetPoint::new(2.0, 3.0), TargetPoint::new(0.5, 3.0)];
        let nu = DiscreteMeasure::new(pts, vec![0.2, 0.3, 0.5]).unwrap();
        let prob = ExtendedProblem::new(sg2d(0.0, 1.0, &nu), nu).unwrap();
        assert_eq!(prob.order(), &[2, 1, 0]);
    }
}
