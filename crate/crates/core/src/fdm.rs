//! Coarse voxel finite-difference model of a heater-integrated crossbar.
//!
//! Cell-centred finite volumes on a uniform grid. Each voxel carries its own
//! conductivities and heat capacity; neighbours exchange current and heat
//! through the series conductance of their two half-cells. Nanorods and
//! filaments thinner than a voxel enter as an area fraction mixed into the
//! host voxel (parallel mixing), which keeps their axial resistance close to
//! the true value at any resolution.
//!
//! Axes: x runs along the rows (bottom-electrode lines), y along the columns
//! (top-electrode lines), z upward from the substrate. The shared electrode
//! between heater and memristor is a per-cell island reached through the
//! cell's access transistor. Voxel `(i, j, k)` has flat index
//! `i + nx·(j + ny·k)`.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::xbar::Coupling;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialProps {
    /// Thermal conductivity, W/(m·K).
    pub kappa_th: f64,
    /// Electrical conductivity, S/m.
    pub sigma: f64,
    /// Density, kg/m³.
    pub rho: f64,
    /// Specific heat, J/(kg·K).
    pub c: f64,
}

impl MaterialProps {
    pub const fn new(kappa_th: f64, sigma: f64, rho: f64, c: f64) -> Self {
        MaterialProps {
            kappa_th,
            sigma,
            rho,
            c,
        }
    }

    pub fn rho_c(&self) -> f64 {
        self.rho * self.c
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = [self.kappa_th, self.sigma, self.rho, self.c]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Param(format!("material {name}: all properties must be positive")))
        }
    }

    /// Area-weighted parallel mix of `inc` (fraction `phi`) into `host`.
    pub fn mix(host: &MaterialProps, inc: &MaterialProps, phi: f64) -> MaterialProps {
        let m = |a: f64, b: f64| (1.0 - phi) * a + phi * b;
        MaterialProps {
            kappa_th: m(host.kappa_th, inc.kappa_th),
            sigma: m(host.sigma, inc.sigma),
            rho: m(host.rho, inc.rho),
            c: m(host.rho_c(), inc.rho_c()) / m(host.rho, inc.rho),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MaterialId {
    SwitchingOxide = 0,
    Rod = 1,
    Electrode = 2,
    Filament = 3,
    Isolation = 4,
    Substrate = 5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Materials {
    pub switching_oxide: MaterialProps,
    pub rod: MaterialProps,
    pub electrode: MaterialProps,
    pub filament: MaterialProps,
    pub isolation: MaterialProps,
    /// Not given with the other stack materials; defaults to the isolation oxide.
    pub substrate: MaterialProps,
}

impl Default for Materials {
    fn default() -> Self {
        let isolation = MaterialProps::new(0.5, 1e-6, 745.0, 2200.0);
        Materials {
            switching_oxide: MaterialProps::new(1.4, 1e-6, 6850.0, 306.0),
            rod: MaterialProps::new(23.0, 1e5, 5200.0, 450.0),
            electrode: MaterialProps::new(71.8, 1e7, 12033.0, 244.0),
            filament: MaterialProps::new(23.0, 1e5, 6850.0, 306.0),
            isolation,
            substrate: isolation,
        }
    }
}

impl Materials {
    pub fn get(&self, id: MaterialId) -> &MaterialProps {
        match id {
            MaterialId::SwitchingOxide => &self.switching_oxide,
            MaterialId::Rod => &self.rod,
            MaterialId::Electrode => &self.electrode,
            MaterialId::Filament => &self.filament,
            MaterialId::Isolation => &self.isolation,
            MaterialId::Substrate => &self.substrate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.switching_oxide.validate("switching_oxide")?;
        self.rod.validate("rod")?;
        self.electrode.validate("electrode")?;
        self.filament.validate("filament")?;
        self.isolation.validate("isolation")?;
        self.substrate.validate("substrate")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    /// Thinner shared electrode (heater closer to the filament) and thicker
    /// top and bottom electrodes.
    Modified,
}

/// Stack geometry. Lateral sizes in nm; layer thicknesses other than the
/// oxides are multiples of `f_nm`, with variant-dependent defaults:
///
/// | layer     | baseline | modified |
/// |-----------|----------|----------|
/// | substrate | 1 F      | 1 F      |
/// | BE        | 0.5 F    | 1 F      |
/// | SE        | 1 F      | 0.5 F    |
/// | TE        | 0.5 F    | 1 F      |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySpec {
    pub f_nm: f64,
    pub k_nm: f64,
    pub t_ox_nm: f64,
    pub r_heater_nm: f64,
    pub r_cf_nm: f64,
    pub variant: Variant,
    pub rows: usize,
    pub cols: usize,
    pub voxel_nm: f64,
    pub substrate_f: f64,
    pub be_f: Option<f64>,
    pub se_f: Option<f64>,
    pub te_f: Option<f64>,
    pub t_amb: f64,
    pub materials: Materials,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec {
            f_nm: 60.0,
            k_nm: 120.0,
            t_ox_nm: 30.0,
            r_heater_nm: 4.19,
            r_cf_nm: 3.1,
            variant: Variant::Baseline,
            rows: 3,
            cols: 3,
            voxel_nm: 10.0,
            substrate_f: 1.0,
            be_f: None,
            se_f: None,
            te_f: None,
            t_amb: 300.0,
            materials: Materials::default(),
        }
    }
}

impl GeometrySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Param(format!("geometry: {m}")));
        let pos = [
            self.f_nm,
            self.k_nm,
            self.t_ox_nm,
            self.r_heater_nm,
            self.r_cf_nm,
            self.voxel_nm,
            self.substrate_f,
            self.t_amb,
        ];
        if !pos.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return bad("lengths and t_amb must be positive");
        }
        if self.k_nm < self.f_nm {
            return bad("pitch K must be at least F");
        }
        if self.r_heater_nm >= self.f_nm / 2.0 || self.r_cf_nm >= self.f_nm / 2.0 {
            return bad("radii must be below F/2");
        }
        if self.rows == 0 || self.cols == 0 {
            return bad("array must have at least one row and column");
        }
        if [self.be_f, self.se_f, self.te_f].iter().flatten().any(|v| !(*v > 0.0)) {
            return bad("layer thickness multiples must be positive");
        }
        self.materials.validate()
    }

    /// Layer thickness multiples of F for (BE, SE, TE).
    pub fn electrode_multiples(&self) -> (f64, f64, f64) {
        let (be, se, te) = match self.variant {
            Variant::Baseline => (0.5, 1.0, 0.5),
            Variant::Modified => (1.0, 0.5, 1.0),
        };
        (
            self.be_f.unwrap_or(be),
            self.se_f.unwrap_or(se),
            self.te_f.unwrap_or(te),
        )
    }
}

/// Electrode a voxel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Line {
    None,
    /// Top-electrode column.
    Top(usize),
    /// Shared-electrode island of `(row, col)`.
    Shared(usize, usize),
    /// Bottom-electrode row.
    Bottom(usize),
}

/// Voxel z-ranges `[start, end)` of each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Layers {
    pub substrate: (usize, usize),
    pub bottom: (usize, usize),
    pub switching: (usize, usize),
    pub shared: (usize, usize),
    pub heater: (usize, usize),
    pub top: (usize, usize),
}

/// One crosspoint: its heater-rod and filament voxels with area weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub row: usize,
    pub col: usize,
    pub heater: Vec<(usize, f64)>,
    pub filament: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// Voxel edge in metres.
    pub h: f64,
    pub material: Vec<MaterialId>,
    /// Sub-voxel rod or filament area fraction.
    pub fill: Vec<f64>,
    pub line: Vec<Line>,
    pub kappa: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho_c: Vec<f64>,
    /// Temperature (K).
    pub t: Vec<f64>,
    /// Potential (V).
    pub v: Vec<f64>,
    pub t_amb: f64,
    pub sites: Vec<Site>,
    pub layers: Option<Layers>,
}

impl VoxelGrid {
    /// Homogeneous block, for solver checks.
    pub fn uniform(dims: [usize; 3], voxel_nm: f64, props: MaterialProps, t_amb: f64) -> Result<Self> {
        props.validate("uniform")?;
        if dims.iter().any(|&d| d == 0) || !(voxel_nm > 0.0) {
            return Err(Error::Param("grid dims and voxel size must be positive".into()));
        }
        let n = dims.iter().product();
        Ok(VoxelGrid {
            dims,
            h: voxel_nm * 1e-9,
            material: vec![MaterialId::Isolation; n],
            fill: vec![0.0; n],
            line: vec![Line::None; n],
            kappa: vec![props.kappa_th; n],
            sigma: vec![props.sigma; n],
            rho_c: vec![props.rho_c(); n],
            t: vec![t_amb; n],
            v: vec![0.0; n],
            t_amb,
            sites: Vec::new(),
            layers: None,
        })
    }

    pub fn len(&self) -> usize {
        self.material.len()
    }

    pub fn is_empty(&self) -> bool {
        self.material.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, n: usize) -> (usize, usize, usize) {
        let [nx, ny, _] = self.dims;
        (n % nx, (n / nx) % ny, n / (nx * ny))
    }

    pub fn count(&self, id: MaterialId) -> usize {
        self.material.iter().filter(|m| **m == id).count()
    }

    pub fn site(&self, row: usize, col: usize) -> Option<&Site> {
        self.sites.iter().find(|s| s.row == row && s.col == col)
    }

    /// Heat capacity of every voxel (J/K).
    pub fn capacity(&self) -> Vec<f64> {
        let vol = self.h.powi(3);
        self.rho_c.iter().map(|c| c * vol).collect()
    }

    /// Stored heat above ambient (J).
    pub fn thermal_energy(&self) -> f64 {
        let vol = self.h.powi(3);
        self.rho_c
            .iter()
            .zip(&self.t)
            .map(|(c, t)| c * vol * (t - self.t_amb))
            .sum()
    }

    /// Weighted mean temperature rise over a voxel set.
    pub fn mean_rise(&self, voxels: &[(usize, f64)]) -> f64 {
        let w: f64 = voxels.iter().map(|(_, w)| w).sum();
        voxels.iter().map(|&(n, wi)| wi * (self.t[n] - self.t_amb)).sum::<f64>() / w
    }

    pub fn reset_temperature(&mut self) {
        self.t.fill(self.t_amb);
    }
}

/// Fraction of the square `[x0, x0+h) × [y0, y0+h)` inside the disc
/// `(cx, cy, r)`, by 16×16 midpoint sampling.
fn disc_fraction(x0: f64, y0: f64, h: f64, cx: f64, cy: f64, r: f64) -> f64 {
    const S: usize = 16;
    let mut inside = 0;
    for a in 0..S {
        for b in 0..S {
            let x = x0 + (a as f64 + 0.5) * h / S as f64;
            let y = y0 + (b as f64 + 0.5) * h / S as f64;
            if (x - cx).powi(2) + (y - cy).powi(2) < r * r {
                inside += 1;
            }
        }
    }
    inside as f64 / (S * S) as f64
}

/// Voxelizes the stack: substrate, BE rows, switching oxide with filaments
/// at the crosspoints, SE islands, heater oxide with nanorods, TE columns,
/// all embedded in isolation oxide. Each crosspoint sits at the
/// centre of its own `K × K` tile.
pub fn build_geometry(spec: &GeometrySpec) -> Result<VoxelGrid> {
    spec.validate()?;
    let h = spec.voxel_nm;
    let voxels = |len: f64, what: &str| -> Result<usize> {
        let n = (len / h).round();
        if n < 1.0 {
            return Err(Error::Resolution(format!("{what} ({len} nm) is thinner than one voxel ({h} nm)")));
        }
        Ok(n as usize)
    };
    let n_ox = voxels(spec.t_ox_nm, "oxide")?;
    if spec.t_ox_nm / h < 2.0 - 1e-9 {
        return Err(Error::Resolution(format!(
            "oxide of {} nm needs at least 2 voxels at {h} nm",
            spec.t_ox_nm
        )));
    }
    let nk = voxels(spec.k_nm, "pitch")?;
    if ((nk as f64) * h - spec.k_nm).abs() > 1e-6 * spec.k_nm {
        return Err(Error::Resolution(format!(
            "pitch {} nm is not a whole number of {h} nm voxels",
            spec.k_nm
        )));
    }
    let f = spec.f_nm;
    if ((f / h).round() as usize) < 1 {
        return Err(Error::Resolution(format!("feature size {f} nm is below one voxel")));
    }
    let (be_f, se_f, te_f) = spec.electrode_multiples();
    let thick = [
        voxels(spec.substrate_f * f, "substrate")?,
        voxels(be_f * f, "bottom electrode")?,
        n_ox,
        voxels(se_f * f, "shared electrode")?,
        n_ox,
        voxels(te_f * f, "top electrode")?,
    ];
    let mut z = 0;
    let mut span = |t: usize| {
        let r = (z, z + t);
        z += t;
        r
    };
    let layers = Layers {
        substrate: span(thick[0]),
        bottom: span(thick[1]),
        switching: span(thick[2]),
        shared: span(thick[3]),
        heater: span(thick[4]),
        top: span(thick[5]),
    };
    let (nx, ny, nz) = (spec.cols * nk, spec.rows * nk, z);
    let n = nx * ny * nz;
    let m = &spec.materials;
    let mut g = VoxelGrid {
        dims: [nx, ny, nz],
        h: h * 1e-9,
        material: vec![MaterialId::Isolation; n],
        fill: vec![0.0; n],
        line: vec![Line::None; n],
        kappa: vec![0.0; n],
        sigma: vec![0.0; n],
        rho_c: vec![0.0; n],
        t: vec![spec.t_amb; n],
        v: vec![0.0; n],
        t_amb: spec.t_amb,
        sites: Vec::new(),
        layers: Some(layers),
    };
    let within = |k: usize, r: (usize, usize)| k >= r.0 && k < r.1;
    let mut sites: Vec<Site> = (0..spec.rows)
        .flat_map(|row| {
            (0..spec.cols).map(move |col| Site {
                row,
                col,
                heater: Vec::new(),
                filament: Vec::new(),
            })
        })
        .collect();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = g.index(i, j, k);
                let (col, row) = (i / nk, j / nk);
                let (xc, yc) = ((col as f64 + 0.5) * spec.k_nm, (row as f64 + 0.5) * spec.k_nm);
                let (x0, y0) = (i as f64 * h, j as f64 * h);
                let on_col = (x0 + 0.5 * h - xc).abs() < f / 2.0;
                let on_row = (y0 + 0.5 * h - yc).abs() < f / 2.0;
                let site = row * spec.cols + col;
                let (host, inc, line, radius) = if within(k, layers.substrate) {
                    (MaterialId::Substrate, None, Line::None, 0.0)
                } else if within(k, layers.bottom) && on_row {
                    (MaterialId::Electrode, None, Line::Bottom(row), 0.0)
                } else if within(k, layers.switching) && on_col && on_row {
                    (MaterialId::SwitchingOxide, Some(MaterialId::Filament), Line::None, spec.r_cf_nm)
                } else if within(k, layers.shared) && on_col && on_row {
                    (MaterialId::Electrode, None, Line::Shared(row, col), 0.0)
                } else if within(k, layers.heater) && on_col && on_row {
                    (MaterialId::Isolation, Some(MaterialId::Rod), Line::None, spec.r_heater_nm)
                } else if within(k, layers.top) && on_col {
                    (MaterialId::Electrode, None, Line::Top(col), 0.0)
                } else {
                    (MaterialId::Isolation, None, Line::None, 0.0)
                };
                let mut props = *m.get(host);
                g.material[idx] = host;
                if let Some(inc) = inc {
                    let phi = disc_fraction(x0, y0, h, xc, yc, radius);
                    if phi > 0.0 {
                        props = MaterialProps::mix(m.get(host), m.get(inc), phi);
                        g.fill[idx] = phi;
                        if phi >= 0.5 {
                            g.material[idx] = inc;
                        }
                        let list = if inc == MaterialId::Rod {
                            &mut sites[site].heater
                        } else {
                            &mut sites[site].filament
                        };
                        list.push((idx, phi));
                    }
                }
                g.line[idx] = line;
                g.kappa[idx] = props.kappa_th;
                g.sigma[idx] = props.sigma;
                g.rho_c[idx] = props.rho_c();
            }
        }
    }
    if let Some(s) = sites.iter().find(|s| s.heater.is_empty() || s.filament.is_empty()) {
        return Err(Error::Resolution(format!(
            "site ({}, {}) has no rod or filament voxel",
            s.row, s.col
        )));
    }
    g.sites = sites;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    /// Signed coordinate that grows toward the face.
    fn coordinate(self, (i, j, k): (usize, usize, usize)) -> i64 {
        let (i, j, k) = (i as i64, j as i64, k as i64);
        match self {
            Face::XMin => -i,
            Face::XMax => i,
            Face::YMin => -j,
            Face::YMax => j,
            Face::ZMin => -k,
            Face::ZMax => k,
        }
    }
}

/// Dirichlet voltage on a vertical (or horizontal) plane of an electrode:
/// among the voxels of `line` (every voxel when `None`), those at the
/// extreme coordinate in the direction of `face`. For a line that reaches
/// the domain boundary this is its end face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub face: Face,
    pub line: Option<Line>,
    pub volts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub patches: Vec<Patch>,
}

impl Drive {
    /// Heater of `(row, col)`: the TE column end face at +y driven, the SE
    /// island's −x side grounded.
    pub fn heater(row: usize, col: usize, volts: f64) -> Drive {
        Drive {
            patches: vec![
                Patch {
                    face: Face::YMax,
                    line: Some(Line::Top(col)),
                    volts,
                },
                Patch {
                    face: Face::XMin,
                    line: Some(Line::Shared(row, col)),
                    volts: 0.0,
                },
            ],
        }
    }

    /// Memristor of `(row, col)`: SE island driven, BE row end face at +x grounded.
    pub fn memristor(row: usize, col: usize, volts: f64) -> Drive {
        Drive {
            patches: vec![
                Patch {
                    face: Face::XMin,
                    line: Some(Line::Shared(row, col)),
                    volts,
                },
                Patch {
                    face: Face::XMax,
                    line: Some(Line::Bottom(row)),
                    volts: 0.0,
                },
            ],
        }
    }
}

/// Symmetric graph Laplacian over voxel faces plus an extra diagonal.
struct Operator {
    dims: [usize; 3],
    gx: Vec<f64>,
    gy: Vec<f64>,
    gz: Vec<f64>,
    diag: Vec<f64>,
}

impl Operator {
    /// Face conductances for a per-voxel transport coefficient `p`.
    fn new(dims: [usize; 3], h: f64, p: &[f64]) -> Operator {
        let [nx, ny, nz] = dims;
        let n = p.len();
        let face = |a: f64, b: f64| 2.0 * h * a * b / (a + b);
        let (mut gx, mut gy, mut gz) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let c = i + nx * (j + ny * k);
                    if i + 1 < nx {
                        gx[c] = face(p[c], p[c + 1]);
                    }
                    if j + 1 < ny {
                        gy[c] = face(p[c], p[c + nx]);
                    }
                    if k + 1 < nz {
                        gz[c] = face(p[c], p[c + nx * ny]);
                    }
                }
            }
        }
        Operator {
            dims,
            gx,
            gy,
            gz,
            diag: vec![0.0; n],
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let [nx, ny, _] = self.dims;
        let sy = nx;
        let sz = nx * ny;
        for (o, (d, xi)) in out.iter_mut().zip(self.diag.iter().zip(x)) {
            *o = d * xi;
        }
        for c in 0..x.len() {
            let g = self.gx[c];
            if g != 0.0 {
                let f = g * (x[c] - x[c + 1]);
                out[c] += f;
                out[c + 1] -= f;
            }
            let g = self.gy[c];
            if g != 0.0 {
                let f = g * (x[c] - x[c + sy]);
                out[c] += f;
                out[c + sy] -= f;
            }
            let g = self.gz[c];
            if g != 0.0 {
                let f = g * (x[c] - x[c + sz]);
                out[c] += f;
                out[c + sz] -= f;
            }
        }
    }

    /// Row sums of off-diagonal magnitudes plus the extra diagonal.
    fn full_diag(&self) -> Vec<f64> {
        let [nx, ny, _] = self.dims;
        let mut d = self.diag.clone();
        for c in 0..d.len() {
            for (g, s) in [(self.gx[c], 1), (self.gy[c], nx), (self.gz[c], nx * ny)] {
                if g != 0.0 {
                    d[c] += g;
                    d[c + s] += g;
                }
            }
        }
        d
    }

    /// Jacobi-preconditioned conjugate gradients; `x` holds the initial guess.
    fn solve(&self, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
        let n = b.len();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            x.fill(0.0);
            return Ok(0);
        }
        let inv: Vec<f64> = self.full_diag().iter().map(|d| 1.0 / d).collect();
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut q = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for it in 0..max_iter {
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= tol * bnorm {
                return Ok(it);
            }
            self.apply(&p, &mut q);
            let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
            let alpha = rz / pq;
            for c in 0..n {
                x[c] += alpha * p[c];
                r[c] -= alpha * q[c];
                z[c] = r[c] * inv[c];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for c in 0..n {
                p[c] = z[c] + beta * p[c];
            }
        }
        Err(Error::Degenerate(format!("conjugate gradients did not converge in {max_iter} iterations")))
    }
}

/// Relative residual target of the potential solve.
pub const POTENTIAL_TOL: f64 = 1e-10;
/// Relative residual target of implicit heat steps.
pub const HEAT_TOL: f64 = 1e-12;
const MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSolution {
    /// Joule power density σ|∇V|² per voxel (W/m³).
    pub joule: Vec<f64>,
    /// Current into the domain through each patch (A), in patch order.
    pub currents: Vec<f64>,
    /// Total dissipated power (W).
    pub power: f64,
    pub iterations: usize,
}

/// Solves ∇·(σ∇V) = 0 with Dirichlet patches and zero normal current
/// elsewhere; writes V into the grid.
pub fn solve_potential(grid: &mut VoxelGrid, drive: &Drive) -> Result<PotentialSolution> {
    if drive.patches.is_empty() {
        return Err(Error::Setup("no Dirichlet patch: potential is undetermined".into()));
    }
    let dims = grid.dims;
    let mut op = Operator::new(dims, grid.h, &grid.sigma);
    let n = grid.len();
    let mut b = vec![0.0; n];
    // (voxel, boundary conductance, patch index)
    let mut bound: Vec<(usize, f64, usize)> = Vec::new();
    for (pi, p) in drive.patches.iter().enumerate() {
        let before = bound.len();
        let members: Vec<usize> = (0..n)
            .filter(|&c| p.line.is_none_or(|l| grid.line[c] == l))
            .collect();
        let extreme = members
            .iter()
            .map(|&c| p.face.coordinate(grid.coords(c)))
            .max();
        for &c in &members {
            if Some(p.face.coordinate(grid.coords(c))) == extreme {
                let g = 2.0 * grid.h * grid.sigma[c];
                op.diag[c] += g;
                b[c] += g * p.volts;
                bound.push((c, g, pi));
            }
        }
        if bound.len() == before {
            return Err(Error::Setup(format!("patch {pi} ({:?} on {:?}) selects no voxel", p.line, p.face)));
        }
    }
    let mut v = grid.v.clone();
    let iterations = op.solve(&b, &mut v, POTENTIAL_TOL, MAX_ITER)?;
    let mut heat = vec![0.0; n];
    let [nx, ny, _] = dims;
    for c in 0..n {
        for (g, s) in [(op.gx[c], 1), (op.gy[c], nx), (op.gz[c], nx * ny)] {
            if g != 0.0 {
                let p = g * (v[c] - v[c + s]).powi(2);
                heat[c] += 0.5 * p;
                heat[c + s] += 0.5 * p;
            }
        }
    }
    let mut currents = vec![0.0; drive.patches.len()];
    for &(c, g, pi) in &bound {
        let dv = drive.patches[pi].volts - v[c];
        currents[pi] += g * dv;
        heat[c] += g * dv * dv;
    }
    let power = heat.iter().sum();
    let vol = grid.h.powi(3);
    grid.v = v;
    Ok(PotentialSolution {
        joule: heat.iter().map(|p| p / vol).collect(),
        currents,
        power,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Backward Euler, unconditionally stable.
    Implicit,
    /// Forward Euler, for cross-checks.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalBoundary {
    /// Bottom face held at ambient, all others adiabatic.
    Sink,
    /// Every face adiabatic.
    Adiabatic,
}

/// Reusable transient heat stepper for one grid.
pub struct HeatSolver {
    op: Operator,
    cap: Vec<f64>,
    sink: Vec<f64>,
    pub scheme: Scheme,
    pub boundary: ThermalBoundary,
}

impl HeatSolver {
    pub fn new(grid: &VoxelGrid, scheme: Scheme, boundary: ThermalBoundary) -> HeatSolver {
        let op = Operator::new(grid.dims, grid.h, &grid.kappa);
        let mut sink = vec![0.0; grid.len()];
        if boundary == ThermalBoundary::Sink {
            let [nx, ny, _] = grid.dims;
            for c in 0..nx * ny {
                sink[c] = 2.0 * grid.h * grid.kappa[c];
            }
        }
        HeatSolver {
            op,
            cap: grid.capacity(),
            sink,
            scheme,
            boundary,
        }
    }

    /// Largest stable explicit step: `min C_i / Σ_j G_ij`. For an interior
    /// voxel of uniform material this is `ρC·h²/(6κ)`.
    pub fn explicit_dt_limit(&self) -> f64 {
        let mut op_diag = self.op.full_diag();
        for (d, s) in op_diag.iter_mut().zip(&self.sink) {
            *d += s;
        }
        self.cap
            .iter()
            .zip(&op_diag)
            .map(|(c, d)| c / d)
            .fold(f64::INFINITY, f64::min)
    }

    /// Heat flow into the sink (W).
    pub fn sink_flux(&self, grid: &VoxelGrid) -> f64 {
        self.sink
            .iter()
            .zip(&grid.t)
            .map(|(g, t)| g * (t - grid.t_amb))
            .sum()
    }

    /// Advances `grid.t` by `dt` with Joule density `joule` (W/m³, empty for none).
    pub fn step(&mut self, grid: &mut VoxelGrid, joule: &[f64], dt: f64) -> Result<usize> {
        if !(dt > 0.0) {
            return Err(Error::Param("heat step dt must be positive".into()));
        }
        let n = grid.len();
        if !joule.is_empty() && joule.len() != n {
            return Err(Error::Param("joule field size differs from grid".into()));
        }
        let vol = grid.h.powi(3);
        let src = |c: usize| if joule.is_empty() { 0.0 } else { joule[c] * vol };
        let mut rise: Vec<f64> = grid.t.iter().map(|t| t - grid.t_amb).collect();
        let iters = match self.scheme {
            Scheme::Explicit => {
                let lim = self.explicit_dt_limit();
                if dt > lim {
                    return Err(Error::Param(format!("explicit dt {dt:e} s exceeds stability bound {lim:e} s")));
                }
                self.op.diag.copy_from_slice(&self.sink);
                let mut flow = vec![0.0; n];
                self.op.apply(&rise, &mut flow);
                for c in 0..n {
                    rise[c] += dt * (src(c) - flow[c]) / self.cap[c];
                }
                0
            }
            Scheme::Implicit => {
                let mut b = vec![0.0; n];
                for c in 0..n {
                    self.op.diag[c] = self.cap[c] / dt + self.sink[c];
                    b[c] = self.cap[c] / dt * rise[c] + src(c);
                }
                self.op.solve(&b, &mut rise, HEAT_TOL, MAX_ITER)?
            }
        };
        for (t, r) in grid.t.iter_mut().zip(rise) {
            *t = grid.t_amb + r;
        }
        Ok(iters)
    }
}

/// One heat step on a fresh solver; prefer [`HeatSolver`] in loops.
pub fn step_heat(
    grid: &mut VoxelGrid,
    joule: &[f64],
    dt: f64,
    scheme: Scheme,
    boundary: ThermalBoundary,
) -> Result<()> {
    HeatSolver::new(grid, scheme, boundary).step(grid, joule, dt).map(|_| ())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pulse {
    pub amplitude_v: f64,
    pub width_s: f64,
    /// Implicit steps during the pulse.
    pub steps: usize,
    /// Observation time after the pulse, in pulse widths.
    pub tail: f64,
}

impl Default for Pulse {
    fn default() -> Self {
        Pulse {
            amplitude_v: 0.5,
            width_s: 10e-9,
            steps: 40,
            tail: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Heater,
    Filament,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingEntry {
    pub kind: ProbeKind,
    pub row: usize,
    pub col: usize,
    pub d_row: i32,
    pub d_col: i32,
    pub peak_rise: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingResult {
    pub heated: (usize, usize),
    pub heater_peak: f64,
    pub power: f64,
    pub entries: Vec<CouplingEntry>,
}

impl CouplingResult {
    pub fn get(&self, kind: ProbeKind, d_row: i32, d_col: i32) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.kind == kind && e.d_row == d_row && e.d_col == d_col)
            .map(|e| e.coefficient)
    }

    /// Heater-to-own-filament coefficient.
    pub fn self_coupling(&self) -> f64 {
        self.get(ProbeKind::Filament, 0, 0).unwrap_or(0.0)
    }

    /// Largest heater-to-other-filament coefficient.
    pub fn max_crosstalk(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.kind == ProbeKind::Filament && (e.d_row, e.d_col) != (0, 0))
            .map(|e| e.coefficient)
            .fold(0.0, f64::max)
    }

    /// Neighbour coupling table for the crossbar model.
    pub fn coupling_table(&self) -> Vec<Coupling> {
        self.entries
            .iter()
            .filter(|e| e.kind == ProbeKind::Filament && (e.d_row, e.d_col) != (0, 0))
            .map(|e| Coupling {
                d_row: e.d_row,
                d_col: e.d_col,
                coeff: e.coefficient,
            })
            .collect()
    }
}

/// Pulses the heater at `heated` and reports, for every probe, the peak
/// temperature rise divided by the heater's own peak rise.
pub fn coupling_coefficients(
    grid: &mut VoxelGrid,
    heated: (usize, usize),
    probes: &[(ProbeKind, usize, usize)],
    pulse: &Pulse,
) -> Result<CouplingResult> {
    if !(pulse.width_s > 0.0) || pulse.steps == 0 || !(pulse.tail >= 0.0) {
        return Err(Error::Param("pulse needs positive width and steps".into()));
    }
    let heater_site = grid
        .site(heated.0, heated.1)
        .ok_or_else(|| Error::Param(format!("no site at {heated:?}")))?
        .heater
        .clone();
    let mut probe_sets = Vec::with_capacity(probes.len());
    for &(kind, r, c) in probes {
        let s = grid
            .site(r, c)
            .ok_or_else(|| Error::Param(format!("no probe site at ({r}, {c})")))?;
        probe_sets.push(match kind {
            ProbeKind::Heater => s.heater.clone(),
            ProbeKind::Filament => s.filament.clone(),
        });
    }
    let sol = solve_potential(grid, &Drive::heater(heated.0, heated.1, pulse.amplitude_v))?;
    grid.reset_temperature();
    let mut solver = HeatSolver::new(grid, Scheme::Implicit, ThermalBoundary::Sink);
    let dt = pulse.width_s / pulse.steps as f64;
    let tail_steps = (pulse.tail * pulse.steps as f64).round() as usize;
    let mut heater_peak: f64 = 0.0;
    let mut peaks = vec![0.0f64; probes.len()];
    for step in 0..pulse.steps + tail_steps {
        let src: &[f64] = if step < pulse.steps { &sol.joule } else { &[] };
        solver.step(grid, src, dt)?;
        heater_peak = heater_peak.max(grid.mean_rise(&heater_site));
        for (p, set) in peaks.iter_mut().zip(&probe_sets) {
            *p = p.max(grid.mean_rise(set));
        }
    }
    if !(heater_peak > 0.0) {
        return Err(Error::Degenerate("heater shows no temperature rise".into()));
    }
    let entries = probes
        .iter()
        .zip(peaks)
        .map(|(&(kind, row, col), peak)| CouplingEntry {
            kind,
            row,
            col,
            d_row: row as i32 - heated.0 as i32,
            d_col: col as i32 - heated.1 as i32,
            peak_rise: peak,
            coefficient: peak / heater_peak,
        })
        .collect();
    Ok(CouplingResult {
        heated,
        heater_peak,
        power: sol.power,
        entries,
    })
}

/// Every filament in the array as a probe list.
pub fn filament_probes(grid: &VoxelGrid) -> Vec<(ProbeKind, usize, usize)> {
    grid.sites
        .iter()
        .map(|s| (ProbeKind::Filament, s.row, s.col))
        .collect()
}

/// Builds the geometry and runs the coupling pulse from the centre site.
pub fn cell_coupling(spec: &GeometrySpec, pulse: &Pulse) -> Result<(VoxelGrid, CouplingResult)> {
    let mut grid = build_geometry(spec)?;
    let centre = (spec.rows / 2, spec.cols / 2);
    let mut probes = vec![(ProbeKind::Heater, centre.0, centre.1)];
    probes.extend(filament_probes(&grid));
    let res = coupling_coefficients(&mut grid, centre, &probes, pulse)?;
    Ok((grid, res))
}

#[derive(Serialize)]
struct DumpField {
    name: &'static str,
    dtype: &'static str,
    offset_bytes: usize,
    count: usize,
}

#[derive(Serialize)]
struct DumpHeader {
    dims: [usize; 3],
    voxel_nm: f64,
    order: &'static str,
    t_amb: f64,
    fields: Vec<DumpField>,
    materials: Vec<(u8, MaterialId)>,
}

/// Writes `<stem>.bin` (temperature f64, potential f64, material u8, all
/// little-endian, x fastest) and a `<stem>.json` header describing it.
pub fn write_field_dump(grid: &VoxelGrid, stem: &Path) -> Result<()> {
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    let n = grid.len();
    let mut bytes = Vec::with_capacity(n * 17);
    for t in &grid.t {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    for v in &grid.v {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend(grid.material.iter().map(|m| *m as u8));
    std::fs::File::create(&bin)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(&bin, e))?;
    let ids = [
        MaterialId::SwitchingOxide,
        MaterialId::Rod,
        MaterialId::Electrode,
        MaterialId::Filament,
        MaterialId::Isolation,
        MaterialId::Substrate,
    ];
    let header = DumpHeader {
        dims: grid.dims,
        voxel_nm: grid.h * 1e9,
        order: "index = i + nx*(j + ny*k), x fastest",
        t_amb: grid.t_amb,
        fields: vec![
            DumpField {
                name: "temperature_k",
                dtype: "f64le",
                offset_bytes: 0,
                count: n,
            },
            DumpField {
                name: "potential_v",
                dtype: "f64le",
                offset_bytes: 8 * n,
                count: n,
            },
            DumpField {
                name: "material",
                dtype: "u8",
                offset_bytes: 16 * n,
                count: n,
            },
        ],
        materials: ids.iter().map(|m| (*m as u8, *m)).collect(),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
}
