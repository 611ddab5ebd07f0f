//! Molecular geometry, field orientations and dipolar couplings.

use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quantum::{CouplingSet, CouplingUnits};

pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
pub const HBAR: f64 = 1.054_571_817e-34;
/// ¹H gyromagnetic ratio (rad s⁻¹ T⁻¹).
pub const GAMMA_H: f64 = 2.6752e8;
/// ³¹P gyromagnetic ratio (rad s⁻¹ T⁻¹).
pub const GAMMA_P: f64 = 1.0840e8;

const ANGSTROM: f64 = 1e-10;

/// Cosine of the magic angle, 1/√3.
pub const MAGIC_COS: f64 = 0.577_350_269_189_625_8;

const MODEL_XYZ: &str = include_str!("../data/model_tpp.xyz");

/// Prefactors turning (3cos²θ − 1)/r³ into a coupling constant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CouplingScale {
    /// Gyromagnetic ratios in rad s⁻¹ T⁻¹; distances read in Å; output in rad/s.
    Physical { gyro_central: f64, gyro_env: f64 },
    /// Distances and scales taken as pure numbers.
    Dimensionless { hetero: f64, homo: f64 },
}

impl CouplingScale {
    pub fn phosphorus_proton() -> Self {
        CouplingScale::Physical { gyro_central: GAMMA_P, gyro_env: GAMMA_H }
    }

    /// Scale for ω_j, per unit of (3cos²θ − 1)/r³ with r in file units.
    pub fn hetero(&self) -> f64 {
        match *self {
            CouplingScale::Physical { gyro_central, gyro_env } => {
                MU0 * gyro_central * gyro_env * HBAR / (8.0 * std::f64::consts::PI) / ANGSTROM.powi(3)
            }
            CouplingScale::Dimensionless { hetero, .. } => hetero,
        }
    }

    /// Scale for Ω_jk. The environment bracket ZZ − ¼(σ₊σ₋ + σ₋σ₊) carries the
    /// secular dipolar strength with μ₀γ²ħ/(16π).
    pub fn homo(&self) -> f64 {
        match *self {
            CouplingScale::Physical { gyro_env, .. } => {
                MU0 * gyro_env * gyro_env * HBAR / (16.0 * std::f64::consts::PI) / ANGSTROM.powi(3)
            }
            CouplingScale::Dimensionless { homo, .. } => homo,
        }
    }

    pub fn units(&self) -> CouplingUnits {
        match self {
            CouplingScale::Physical { .. } => CouplingUnits::Physical,
            CouplingScale::Dimensionless { .. } => CouplingUnits::Dimensionless,
        }
    }
}

/// scale·(3cos²θ − 1)/r³.
pub fn dipolar_coupling(r: f64, theta: f64, scale: f64) -> Result<f64> {
    dipolar_from_cos(r, theta.cos(), scale)
}

fn dipolar_from_cos(r: f64, cos_theta: f64, scale: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidDistance(r));
    }
    Ok(scale * (3.0 * cos_theta * cos_theta - 1.0) / (r * r * r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub label: String,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    sites: Vec<Site>,
    central_index: usize,
    scale: CouplingScale,
}

impl Geometry {
    pub fn new(sites: Vec<Site>, central_index: usize, scale: CouplingScale) -> Result<Self> {
        if sites.len() < 2 {
            return Err(Error::InvalidGeometry(format!("need at least 2 sites, got {}", sites.len())));
        }
        if central_index >= sites.len() {
            return Err(Error::InvalidGeometry(format!(
                "central index {central_index} out of range for {} sites",
                sites.len()
            )));
        }
        if sites.iter().any(|s| s.position.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidGeometry("non-finite coordinate".into()));
        }
        for (i, a) in sites.iter().enumerate() {
            for b in &sites[i + 1..] {
                if (a.position - b.position).norm() == 0.0 {
                    return Err(Error::InvalidGeometry(format!("sites {} and {} coincide", a.label, b.label)));
                }
            }
        }
        Ok(Self { sites, central_index, scale })
    }

    /// Parses `label x y z` lines; `#` starts a comment line.
    pub fn parse(text: &str, central_index: usize, scale: CouplingScale) -> Result<Self> {
        let mut sites = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::GeometryParse {
                    line: lineno + 1,
                    msg: format!("expected `label x y z`, found {} fields", fields.len()),
                });
            }
            let mut xyz = [0.0; 3];
            for (slot, field) in xyz.iter_mut().zip(&fields[1..]) {
                *slot = field.parse().map_err(|_| Error::GeometryParse {
                    line: lineno + 1,
                    msg: format!("cannot parse coordinate `{field}`"),
                })?;
            }
            sites.push(Site { label: fields[0].to_string(), position: Vector3::from(xyz) });
        }
        Self::new(sites, central_index, scale)
    }

    pub fn from_file(path: &Path, central_index: usize, scale: CouplingScale) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, central_index, scale)
    }

    /// Bundled approximate triphenylphosphine: ³¹P at the centre, 15 ¹H.
    /// A MODEL geometry, not crystal data.
    pub fn model() -> Self {
        Self::parse(MODEL_XYZ, 0, CouplingScale::phosphorus_proton()).expect("bundled geometry parses")
    }

    pub fn model_source() -> &'static str {
        MODEL_XYZ
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn central_index(&self) -> usize {
        self.central_index
    }

    pub fn scale(&self) -> CouplingScale {
        self.scale
    }

    pub fn with_scale(mut self, scale: CouplingScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn n_env(&self) -> usize {
        self.sites.len() - 1
    }

    pub fn central(&self) -> &Site {
        &self.sites[self.central_index]
    }

    /// Environment sites in file order, central site skipped.
    pub fn environment(&self) -> impl Iterator<Item = &Site> {
        let ci = self.central_index;
        self.sites.iter().enumerate().filter(move |(i, _)| *i != ci).map(|(_, s)| s)
    }

    /// Keeps the `n` environment sites nearest the central site. Ties keep file order.
    pub fn nearest(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_env() {
            return Err(Error::InvalidGeometry(format!("cannot keep {n} of {} environment sites", self.n_env())));
        }
        let c = self.central().position;
        let mut env: Vec<(usize, f64)> = self
            .sites
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.central_index)
            .map(|(i, s)| (i, (s.position - c).norm()))
            .collect();
        env.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut keep: Vec<usize> = env[..n].iter().map(|(i, _)| *i).collect();
        keep.push(self.central_index);
        keep.sort_unstable();
        let central_index = keep.iter().position(|&i| i == self.central_index).unwrap();
        let sites = keep.into_iter().map(|i| self.sites[i].clone()).collect();
        Self::new(sites, central_index, self.scale)
    }

    pub fn translated(&self, shift: Vector3<f64>) -> Self {
        let sites = self.sites.iter().map(|s| Site { label: s.label.clone(), position: s.position + shift }).collect();
        Self { sites, central_index: self.central_index, scale: self.scale }
    }

    /// Canonical text form: one `label x y z` line per site, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sites {
            out.push_str(&format!("{} {:.16e} {:.16e} {:.16e}\n", s.label, s.position.x, s.position.y, s.position.z));
        }
        out
    }
}

/// SHA-256 of geometry bytes, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Static-field direction in the molecular frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    direction: Vector3<f64>,
}

impl Orientation {
    /// Normalizes `v`.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidGeometry("field direction must be a non-zero finite vector".into()));
        }
        Ok(Self { direction: v / n })
    }

    pub fn z() -> Self {
        Self { direction: Vector3::z() }
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EnsembleSpec {
    pub n_orientations: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(n_orientations: usize, seed: u64) -> Result<Self> {
        if n_orientations == 0 {
            return Err(Error::InvalidArgument("n_orientations must be >= 1".into()));
        }
        Ok(Self { n_orientations, seed })
    }
}

/// Orientation `index` of the stream for `seed`. Each index owns its own
/// ChaCha stream, so any partition of the index range reproduces the same set.
pub fn orientation_at(seed: u64, index: usize) -> Orientation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let v: [f64; 3] = UnitSphere.sample(&mut rng);
    Orientation::new(Vector3::from(v)).expect("unit sphere sample")
}

pub fn sample_orientations(spec: &EnsembleSpec) -> Vec<Orientation> {
    (0..spec.n_orientations).map(|i| orientation_at(spec.seed, i)).collect()
}

/// Heteronuclear and homonuclear couplings for one field direction.
pub fn couplings_for(orientation: &Orientation, geom: &Geometry) -> Result<CouplingSet> {
    let b = orientation.direction();
    let c = geom.central().position;
    let env: Vec<Vector3<f64>> = geom.environment().map(|s| s.position).collect();
    let n = env.len();
    let pair = |from: &Vector3<f64>, to: &Vector3<f64>, scale: f64| -> Result<f64> {
        let d = to - from;
        let r = d.norm();
        if r == 0.0 {
            return Err(Error::InvalidDistance(0.0));
        }
        dipolar_from_cos(r, d.dot(b) / r, scale)
    };
    let hetero = env.iter().map(|p| pair(&c, p, geom.scale.hetero())).collect::<Result<Vec<_>>>()?;
    let mut homo = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in (j + 1)..n {
            let v = pair(&env[j], &env[k], geom.scale.homo())?;
            homo[(j, k)] = v;
            homo[(k, j)] = v;
        }
    }
    CouplingSet::new(hetero, homo, geom.scale.units())
}

/// Number of environment spins with sin²(α ω_j T) > 1/2.
pub fn connected_group_size(c: &CouplingSet, t: f64, alpha: f64) -> usize {
    c.hetero().iter().filter(|w| (alpha * *w * t).sin().powi(2) > 0.5).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit() -> CouplingScale {
        CouplingScale::Dimensionless { hetero: 1.0, homo: 1.0 }
    }

    fn site(label: &str, x: f64, y: f64, z: f64) -> Site {
        Site { label: label.into(), position: Vector3::new(x, y, z) }
    }

    #[test]
    fn dipolar_examples() {
        assert!(dipolar_coupling(1.7, MAGIC_COS.acos(), 3.0).unwrap().abs() < 1e-15);
        assert_eq!(dipolar_coupling(1.0, 0.0, 1.0).unwrap(), 2.0);
        assert!((dipolar_coupling(2.0, PI / 2.0, 1.0).unwrap() + 0.125).abs() < 1e-16);
        assert_eq!(dipolar_coupling(0.0, 0.0, 1.0), Err(Error::InvalidDistance(0.0)));
        assert!(dipolar_coupling(-1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn physical_scales() {
        let s = CouplingScale::phosphorus_proton();
        // μ0 γP γH ħ / (8π) at 1 Å, rad/s
        let want = 1e-7 * GAMMA_P * GAMMA_H * HBAR / 2.0 / 1e-30;
        assert!((s.hetero() / want - 1.0).abs() < 1e-12);
        assert!((s.homo() / (1e-7 * GAMMA_H * GAMMA_H * HBAR / 4.0 / 1e-30) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_sites_on_axis() {
        let g = Geometry::new(vec![site("P", 0.0, 0.0, 0.0), site("H", 0.0, 0.0, 1.0)], 0, unit()).unwrap();
        let c = couplings_for(&Orientation::z(), &g).unwrap();
        assert_eq!(c.hetero(), &[2.0]);
    }

    #[test]
    fn collinear_chain() {
        let g = Geometry::new(
            vec![site("P", 0.0, 0.0, 0.0), site("H1", 0.0, 0.0, 1.0), site("H2", 0.0, 0.0, 2.0)],
            0,
            CouplingScale::Dimensionless { hetero: 3.0, homo: 5.0 },
        )
        .unwrap();
        let c = couplings_for(&Orientation::z(), &g).unwrap();
        assert_eq!(c.hetero(), &[6.0, 6.0 / 8.0]);
        assert_eq!(c.homo()[(0, 1)], 10.0);
        assert_eq!(c.homo()[(1, 0)], 10.0);
    }

    #[test]
    fn geometry_validation() {
        assert!(Geometry::new(vec![site("P", 0.0, 0.0, 0.0)], 0, unit()).is_err());
        assert!(Geometry::new(vec![site("P", 0.0, 0.0, 0.0), site("H", 0.0, 0.0, 1.0)], 2, unit()).is_err());
        assert!(Geometry::new(vec![site("P", 0.0, 0.0, 0.0), site("H", 0.0, 0.0, 0.0)], 0, unit()).is_err());
    }

    #[test]
    fn parser_handles_comments_and_errors() {
        let g = Geometry::parse("# c\n\nP 0 0 0\n  # more\nH 1 0 0\nH 0 2 0\n", 1, unit()).unwrap();
        assert_eq!(g.sites().len(), 3);
        assert_eq!(g.central().label, "H");
        assert_eq!(g.environment().map(|s| s.label.as_str()).collect::<Vec<_>>(), vec!["P", "H"]);
        assert_eq!(
            Geometry::parse("P 0 0 0\nH 1 x 0\n", 0, unit()).unwrap_err(),
            Error::GeometryParse { line: 2, msg: "cannot parse coordinate `x`".into() }
        );
        assert!(matches!(Geometry::parse("P 0 0\n", 0, unit()), Err(Error::GeometryParse { line: 1, .. })));
    }

    #[test]
    fn model_geometry_shape() {
        let g = Geometry::model();
        assert_eq!(g.n_env(), 15);
        assert_eq!(g.central().label, "P1");
        let mut d: Vec<f64> = g.environment().map(|s| s.position.norm()).collect();
        d.sort_by(|a, b| a.total_cmp(b));
        assert!(d[0] > 2.5 && d[0] < 3.2, "ortho distance {}", d[0]);
        assert!(d[14] < 6.0);
    }

    #[test]
    fn nearest_keeps_closest_in_file_order() {
        let g = Geometry::new(
            vec![
                site("A", 0.0, 0.0, 3.0),
                site("P", 0.0, 0.0, 0.0),
                site("B", 1.0, 0.0, 0.0),
                site("C", 0.0, 2.0, 0.0),
                site("D", 0.0, -1.0, 0.0),
            ],
            1,
            unit(),
        )
        .unwrap();
        let k = g.nearest(2).unwrap();
        let labels: Vec<&str> = k.sites().iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, vec!["P", "B", "D"]);
        assert_eq!(k.central().label, "P");
        assert!(g.nearest(5).is_err());
        let model = Geometry::model().nearest(8).unwrap();
        assert_eq!(model.n_env(), 8);
    }

    #[test]
    fn symmetry_rotation_permutes_couplings() {
        // Threefold copies of one model ring: rotating the field by 120° only
        // permutes the environment.
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 2.0 * PI / 3.0);
        let model = Geometry::model();
        let ring: Vec<Vector3<f64>> = model.environment().take(5).map(|s| s.position).collect();
        let mut sites = vec![site("P", 0.0, 0.0, 0.0)];
        for k in 0..3 {
            for p in &ring {
                let mut q = *p;
                for _ in 0..k {
                    q = rot * q;
                }
                sites.push(Site { label: format!("H{k}"), position: q });
            }
        }
        let g = Geometry::new(sites, 0, CouplingScale::phosphorus_proton()).unwrap();
        let b = orientation_at(3, 0);
        let b2 = Orientation::new(rot * b.direction()).unwrap();
        let mut h1 = couplings_for(&b, &g).unwrap().hetero().to_vec();
        let mut h2 = couplings_for(&b2, &g).unwrap().hetero().to_vec();
        h1.sort_by(|a, b| a.total_cmp(b));
        h2.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in h1.iter().zip(&h2) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        let axial = Geometry::new(
            vec![site("P", 0.0, 0.0, 0.0), site("H", 0.0, 0.0, 1.5), site("H", 0.0, 0.0, -2.5)],
            0,
            unit(),
        )
        .unwrap();
        let tilted = Orientation::new(Vector3::new(0.3, 0.1, 0.8)).unwrap();
        let spun = Orientation::new(rot * tilted.direction()).unwrap();
        let a = couplings_for(&tilted, &axial).unwrap();
        let b = couplings_for(&spun, &axial).unwrap();
        for (x, y) in a.hetero().iter().zip(b.hetero()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn orientation_sampling_is_reproducible() {
        let spec = EnsembleSpec::new(1, 42).unwrap();
        assert_eq!(sample_orientations(&spec), sample_orientations(&spec));
        let many = sample_orientations(&EnsembleSpec::new(10_000, 42).unwrap());
        let mut mean = Vector3::zeros();
        for o in &many {
            assert!((o.direction().norm() - 1.0).abs() <= 1e-12);
            mean += o.direction();
        }
        mean /= many.len() as f64;
        assert!(mean.norm() <= 0.05);
        let bound = 3.0 / (many.len() as f64).sqrt();
        assert!(mean.iter().all(|m| m.abs() <= bound));
        assert_eq!(many[17], orientation_at(42, 17));
        assert!(EnsembleSpec::new(0, 1).is_err());
    }

    #[test]
    fn connected_group_examples() {
        let c = CouplingSet::heteronuclear(vec![1.0, 2.0, 0.1]).unwrap();
        assert_eq!(connected_group_size(&c, 0.0, 1.0), 0);
        let one = CouplingSet::heteronuclear(vec![2.0]).unwrap();
        assert_eq!(connected_group_size(&one, PI / 4.0, 1.0), 1);
        assert_eq!(connected_group_size(&one, PI / 4.0, 0.25), 0);
    }

    #[test]
    fn connected_group_ensemble_rises_then_plateaus() {
        let g = Geometry::model();
        let alpha = 2f64.sqrt() / 3.0;
        let orients = sample_orientations(&EnsembleSpec::new(10_000, 5).unwrap());
        let cs: Vec<CouplingSet> = orients.iter().map(|o| couplings_for(o, &g).unwrap()).collect();
        let ts: Vec<f64> = (0..=40).map(|i| i as f64 * 500e-6).collect();
        let curve: Vec<f64> = ts
            .iter()
            .map(|&t| cs.iter().map(|c| connected_group_size(c, t, alpha) as f64).sum::<f64>() / cs.len() as f64)
            .collect();
        assert_eq!(curve[0], 0.0);
        // late-time sin² is equidistributed, so the plateau sits near N/2
        let tail = &curve[30..];
        let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((tail_mean - 7.5).abs() < 1.0, "plateau {tail_mean}");
        assert!(tail.iter().all(|v| (v - tail_mean).abs() < 0.15 * tail_mean));
        let reach = curve.iter().position(|&v| v >= 0.9 * tail_mean).unwrap();
        assert!(reach < 20 && curve[..reach].iter().all(|&v| v < tail_mean));
    }

    proptest! {
        #[test]
        fn translation_invariance(dx in -5.0f64..5.0, dy in -5.0f64..5.0, dz in -5.0f64..5.0, idx in 0usize..50) {
            let g = Geometry::model();
            let o = orientation_at(9, idx);
            let a = couplings_for(&o, &g).unwrap();
            let b = couplings_for(&o, &g.translated(Vector3::new(dx, dy, dz))).unwrap();
            let scale = a.max_abs_hetero();
            for (x, y) in a.hetero().iter().zip(b.hetero()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
            prop_assert!((a.homo() - b.homo()).amax() <= 1e-9 * a.homo().amax());
        }

        #[test]
        fn magic_cone_zero(phi in 0.0f64..(2.0 * PI), r in 0.5f64..5.0) {
            let s = (1.0 - MAGIC_COS * MAGIC_COS).sqrt();
            let p = Vector3::new(r * s * phi.cos(), r * s * phi.sin(), r * MAGIC_COS);
            let g = Geometry::new(vec![site("P", 0.0, 0.0, 0.0), Site { label: "H".into(), position: p }], 0, unit()).unwrap();
            let c = couplings_for(&Orientation::z(), &g).unwrap();
            prop_assert!(c.hetero()[0].abs() <= 1e-14);
        }

        #[test]
        fn group_size_monotone_in_first_quarter_period(seed in 0u64..500, frac in 0.0f64..1.0) {
            let g = Geometry::model();
            let c = couplings_for(&orientation_at(seed, 0), &g).unwrap();
            let alpha = 1.0;
            // window: α|ω_j|T ≤ π/2 for every j
            let t_max = std::f64::consts::FRAC_PI_2 / (alpha * c.max_abs_hetero());
            let t1 = frac * t_max;
            let t2 = (frac + 0.1).min(1.0) * t_max;
            prop_assert!(connected_group_size(&c, t1, alpha) <= connected_group_size(&c, t2, alpha));
        }
    }
}
