//! Materials, axisymmetric regions, the reference hose/coil/cavity scene,
//! and rasterization onto a uniform solver grid.
//!
//! Everything lives in cylindrical (r, z) coordinates with the hose axis
//! along z. Regions are axis-aligned rectangles of that half-plane: annuli
//! or solid disks. The reference scene reproduces the measured device: a
//! mu-metal core wrapped in alternating mu-metal/aluminium shells feeding
//! through a hole in a superconducting cavity wall, driven by a close-wound
//! coil embedded in the elongated outermost shell.
//!
//! Lengths are metres, currents amperes. Scenes are immutable once built and
//! safe to share across threads; rasterization is a pure function.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Relative permeability pair of a linear (possibly anisotropic) material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub name: String,
    /// Relative permeability along the hose axis (z).
    pub mu_r_axial: f64,
    /// Relative permeability in the radial direction.
    pub mu_r_radial: f64,
    /// Flux density above which the material stops behaving linearly [T].
    /// Checked diagnostically; the solver itself stays linear.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation_b: Option<f64>,
}

impl Material {
    pub fn isotropic(name: &str, mu_r: f64) -> Self {
        Self {
            name: name.to_owned(),
            mu_r_axial: mu_r,
            mu_r_radial: mu_r,
            saturation_b: None,
        }
    }

    pub fn with_saturation(mut self, saturation_b: f64) -> Self {
        self.saturation_b = Some(saturation_b);
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = |mu: f64| mu.is_finite() && mu > 0.0;
        if !ok(self.mu_r_axial) || !ok(self.mu_r_radial) {
            return Err(GeometryError::InvalidMaterial {
                name: self.name.clone(),
                reason: format!(
                    "permeabilities must be strictly positive and finite, got ({}, {})",
                    self.mu_r_axial, self.mu_r_radial
                ),
            });
        }
        if let Some(b) = self.saturation_b {
            if !(b > 0.0) {
                return Err(GeometryError::InvalidMaterial {
                    name: self.name.clone(),
                    reason: format!("saturation_b must be > 0, got {b}"),
                });
            }
        }
        Ok(())
    }
}

/// Axisymmetric region cross-section in the (r, z) half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum RegionShape {
    Annulus { r_in: f64, r_out: f64, z_min: f64, z_max: f64 },
    Disk { r_out: f64, z_min: f64, z_max: f64 },
}

impl RegionShape {
    pub fn r_in(&self) -> f64 {
        match *self {
            RegionShape::Annulus { r_in, .. } => r_in,
            RegionShape::Disk { .. } => 0.0,
        }
    }

    pub fn r_out(&self) -> f64 {
        match *self {
            RegionShape::Annulus { r_out, .. } | RegionShape::Disk { r_out, .. } => r_out,
        }
    }

    pub fn z_min(&self) -> f64 {
        match *self {
            RegionShape::Annulus { z_min, .. } | RegionShape::Disk { z_min, .. } => z_min,
        }
    }

    pub fn z_max(&self) -> f64 {
        match *self {
            RegionShape::Annulus { z_max, .. } | RegionShape::Disk { z_max, .. } => z_max,
        }
    }

    /// Radial thickness of the material band.
    pub fn radial_thickness(&self) -> f64 {
        self.r_out() - self.r_in()
    }

    pub fn contains(&self, r: f64, z: f64) -> bool {
        r >= self.r_in() && r < self.r_out() && z >= self.z_min() && z < self.z_max()
    }

    /// True when the open interiors of the two cross-sections intersect.
    pub fn overlaps(&self, other: &RegionShape) -> bool {
        let r_overlap =
            self.r_in().max(other.r_in()) < self.r_out().min(other.r_out());
        let z_overlap =
            self.z_min().max(other.z_min()) < self.z_max().min(other.z_max());
        r_overlap && z_overlap
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let (r_in, r_out, z_min, z_max) =
            (self.r_in(), self.r_out(), self.z_min(), self.z_max());
        if !(r_in >= 0.0 && r_in < r_out && z_min < z_max)
            || !r_out.is_finite()
            || !z_min.is_finite()
            || !z_max.is_finite()
        {
            return Err(GeometryError::InvalidRegion(format!(
                "need 0 <= r_in < r_out and z_min < z_max, got r [{r_in}, {r_out}], z [{z_min}, {z_max}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub shape: RegionShape,
    /// Name of a material in the scene's material table.
    pub material: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Region {
    pub fn new(shape: RegionShape, material: &str, label: &str) -> Self {
        Self {
            shape,
            material: material.to_owned(),
            label: Some(label.to_owned()),
        }
    }

    pub fn display_name(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => format!("{} region", self.material),
        }
    }
}

/// Drive coil: a close-wound single-layer solenoid, modelled as a uniform
/// azimuthal current band. The radial build of the band equals the winding
/// pitch `length / turns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilSpec {
    pub turns: u32,
    /// Mean winding radius [m].
    pub radius: f64,
    /// Axial length of the winding [m].
    pub length: f64,
    /// Axial position of the winding centre [m].
    pub center_z: f64,
    /// Drive current [A].
    pub current: f64,
}

impl CoilSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.turns < 1 {
            return Err(GeometryError::InvalidCoil("turns must be >= 1".into()));
        }
        if !(self.radius > 0.0) || !(self.length > 0.0) {
            return Err(GeometryError::InvalidCoil(format!(
                "radius and length must be > 0, got {} and {}",
                self.radius, self.length
            )));
        }
        if !self.current.is_finite() || !self.center_z.is_finite() {
            return Err(GeometryError::InvalidCoil("non-finite coil parameter".into()));
        }
        if self.radial_build() / 2.0 >= self.radius {
            return Err(GeometryError::InvalidCoil(
                "winding band would cross the axis; radius too small for the pitch".into(),
            ));
        }
        Ok(())
    }

    /// Radial thickness of the current band (close-wound pitch).
    pub fn radial_build(&self) -> f64 {
        self.length / self.turns as f64
    }

    /// Winding cross-section in the (r, z) half-plane.
    pub fn cross_section(&self) -> RegionShape {
        let t = self.radial_build();
        RegionShape::Annulus {
            r_in: self.radius - t / 2.0,
            r_out: self.radius + t / 2.0,
            z_min: self.center_z - self.length / 2.0,
            z_max: self.center_z + self.length / 2.0,
        }
    }
}

/// One hose layer: a cylindrical shell of the given radial thickness and
/// axial length, wrapped around everything inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoseLayer {
    pub thickness: f64,
    /// Material name; must resolve against the scene material table.
    pub material: String,
    pub length: f64,
}

/// The layered hose: a ferromagnetic core wire plus alternating
/// ferromagnet/superconductor shells. All layers share the same output tip
/// plane; the outermost shell is additionally extended by `shell_overhang`
/// on the input side, forming the sleeve that houses the coil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoseSpec {
    pub core_radius: f64,
    pub layers: Vec<HoseLayer>,
    /// z of the cavity wall's outer face [m].
    pub cavity_wall_z: f64,
    /// Input-side extension of the outermost shell [m].
    pub shell_overhang: f64,
}

/// Solver domain bounds: r in [0, r_max], z in [z_min, z_max].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub r_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Domain {
    pub fn contains_shape(&self, shape: &RegionShape) -> bool {
        shape.r_out() <= self.r_max && shape.z_min() >= self.z_min && shape.z_max() <= self.z_max
    }
}

/// Complete axisymmetric problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub materials: Vec<Material>,
    pub regions: Vec<Region>,
    pub coil: CoilSpec,
    /// Superconducting cavity wall; its inner radius is the hole radius.
    pub wall: Region,
    /// Probe points (r, z) [m].
    pub probes: Vec<(f64, f64)>,
    pub domain: Domain,
}

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid material `{name}`: {reason}")]
    InvalidMaterial { name: String, reason: String },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("invalid coil: {0}")]
    InvalidCoil(String),
    #[error("unknown material `{0}` referenced by a region")]
    UnknownMaterial(String),
    #[error("regions `{0}` and `{1}` have intersecting interiors")]
    OverlappingRegions(String, String),
    #[error("`{0}` extends outside the domain bounds")]
    OutsideDomain(String),
    #[error("wall hole radius {hole} m is smaller than the hose outer radius {hose} m at the wall plane")]
    HoseWiderThanHole { hole: f64, hose: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(
        "grid spacing {spacing} m cannot resolve layer `{layer}` ({thickness} m thick; fewer than 2 cells across)"
    )]
    Resolution { layer: String, thickness: f64, spacing: f64 },
    #[error("grid does not cover the scene domain")]
    GridTooSmall,
}

impl Scene {
    /// Checks material references, region invariants, pairwise disjointness
    /// (including the wall and the coil winding), domain containment, and
    /// that the hose fits through the wall hole.
    pub fn validate(&self) -> Result<(), GeometryError> {
        for m in &self.materials {
            m.validate()?;
        }
        let table = self.material_table();
        let mut all: Vec<(String, RegionShape)> = Vec::new();
        for region in self.regions.iter().chain(std::iter::once(&self.wall)) {
            region.shape.validate()?;
            if !table.contains_key(region.material.as_str()) {
                return Err(GeometryError::UnknownMaterial(region.material.clone()));
            }
            all.push((region.display_name(), region.shape));
        }
        self.coil.validate()?;
        all.push(("coil winding".to_owned(), self.coil.cross_section()));
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                if all[i].1.overlaps(&all[j].1) {
                    return Err(GeometryError::OverlappingRegions(
                        all[i].0.clone(),
                        all[j].0.clone(),
                    ));
                }
            }
        }
        for (name, shape) in &all {
            if !self.domain.contains_shape(shape) {
                return Err(GeometryError::OutsideDomain(name.clone()));
            }
        }
        // Hose layers crossing the wall's z range must fit through the hole.
        let hole = self.wall.shape.r_in();
        let wall_z = (self.wall.shape.z_min(), self.wall.shape.z_max());
        for region in &self.regions {
            let s = &region.shape;
            if s.z_max() > wall_z.0 && s.z_min() < wall_z.1 && s.r_out() > hole {
                return Err(GeometryError::HoseWiderThanHole {
                    hole,
                    hose: s.r_out(),
                });
            }
        }
        Ok(())
    }

    pub fn material_table(&self) -> HashMap<&str, &Material> {
        self.materials.iter().map(|m| (m.name.as_str(), m)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let scene: Scene = serde_json::from_str(text)
            .map_err(|e| GeometryError::Config(format!("scene JSON: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }
}

// ---------------------------------------------------------------------------
// Reference scene
// ---------------------------------------------------------------------------

/// Measured device parameters and the assumptions filled in around them.
/// Radii and thicknesses of the shell stack, the coil winding, and the coil
/// drive come from the device description; wall thickness, hole radius,
/// assembly clearance and the probe offsets are assumptions of this model
/// (the source does not give cavity dimensions or exact qubit positions).
pub mod paper {
    /// Core mu-metal wire radius [m] (1 mm thick wire).
    pub const CORE_RADIUS: f64 = 0.5e-3;
    /// Axial length of the core and the seven inner shells [m].
    pub const INNER_LENGTH: f64 = 10.0e-3;
    /// Input-side extension of the outermost aluminium shell [m]
    /// (20 mm total against 10 mm for the inner stack).
    pub const SHELL_OVERHANG: f64 = 10.0e-3;
    /// Radial clearance between the mu-metal stack and the outermost
    /// aluminium sleeve so the close-wound coil fits the bore (assumption).
    pub const SLEEVE_CLEARANCE: f64 = 0.15e-3;
    /// Cavity wall thickness [m] (assumption).
    pub const WALL_THICKNESS: f64 = 2.0e-3;
    /// Wall hole radius [m] (assumption; clears the sleeve outer radius).
    pub const HOLE_RADIUS: f64 = 2.2e-3;
    /// On-axis probe distance past the wall's outer face [m] (assumption
    /// consistent with the field-map figure scale).
    pub const CENTRAL_PROBE_OFFSET: f64 = 3.5e-3;
    /// Radial offset of the side qubit probe [m] (qubit separation ~3 mm).
    pub const SIDE_PROBE_RADIUS: f64 = 3.0e-3;
    /// Default domain radius [m].
    pub const DOMAIN_R_MAX: f64 = 25.0e-3;
    /// Default domain half-span in z around the wall [m].
    pub const DOMAIN_HALF_SPAN: f64 = 30.0e-3;

    pub const COIL_TURNS: u32 = 10;
    /// Mean coil radius [m] (3 mm diameter).
    pub const COIL_RADIUS: f64 = 1.5e-3;
    pub const COIL_LENGTH: f64 = 4.0e-3;
    /// Default drive current [A] matching the simulated field map.
    pub const COIL_CURRENT: f64 = 10.0e-3;

    /// Mu-metal saturation flux density [T] (soft-ferromagnet scale).
    pub const MU_METAL_SATURATION: f64 = 0.8;
    /// Permeability used for the ferromagnet.
    pub const MU_FERROMAGNET: f64 = 1.0e4;
    /// Permeability used for the superconductor.
    pub const MU_SUPERCONDUCTOR: f64 = 1.0e-4;
}

/// Optional parameter overrides for [`build_paper_scene`]. Unknown keys in
/// the JSON form are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneOverrides {
    pub core_radius: Option<f64>,
    /// Full replacement for the shell stack (ordered inner to outer).
    pub layers: Option<Vec<HoseLayer>>,
    pub shell_overhang: Option<f64>,
    pub cavity_wall_z: Option<f64>,
    pub wall_thickness: Option<f64>,
    pub hole_radius: Option<f64>,
    pub coil_turns: Option<u32>,
    pub coil_radius: Option<f64>,
    pub coil_length: Option<f64>,
    pub coil_center_z: Option<f64>,
    pub coil_current: Option<f64>,
    /// How far the hose tip protrudes past the wall's outer face;
    /// defaults to the wall thickness (tip flush with the inner face).
    pub tip_past_wall: Option<f64>,
    pub domain_r_max: Option<f64>,
    pub domain_half_span: Option<f64>,
}

impl SceneOverrides {
    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        serde_json::from_str(text)
            .map_err(|e| GeometryError::Config(format!("overrides JSON: {e}")))
    }
}

fn standard_materials() -> Vec<Material> {
    vec![
        Material::isotropic("vacuum", 1.0),
        Material::isotropic("mu_metal", paper::MU_FERROMAGNET)
            .with_saturation(paper::MU_METAL_SATURATION),
        Material::isotropic("aluminum_sc", paper::MU_SUPERCONDUCTOR),
    ]
}

/// Default shell stack, inner to outer: alternating mu-metal and aluminium
/// starting with a mu-metal shell on the mu-metal core. Aluminium shells are
/// 200 um thick; mu-metal shells are 100 um except the outermost at 200 um.
fn paper_layers() -> Vec<HoseLayer> {
    let fm = |thickness: f64| HoseLayer {
        thickness,
        material: "mu_metal".into(),
        length: paper::INNER_LENGTH,
    };
    let sc = |thickness: f64| HoseLayer {
        thickness,
        material: "aluminum_sc".into(),
        length: paper::INNER_LENGTH,
    };
    vec![
        fm(100e-6),
        sc(200e-6),
        fm(100e-6),
        sc(200e-6),
        fm(100e-6),
        sc(200e-6),
        fm(200e-6),
        sc(200e-6), // outermost sleeve; extended by shell_overhang at input
    ]
}

/// Builds the reference scene: core + 8 shells, coil in the sleeve at the
/// hose entrance, superconducting cavity wall with a hole, and probe points
/// at the central qubit (on axis, 3.5 mm past the wall) and the side qubit
/// (3 mm radial offset, same z).
pub fn build_paper_scene(overrides: &SceneOverrides) -> Result<Scene, GeometryError> {
    let core_radius = overrides.core_radius.unwrap_or(paper::CORE_RADIUS);
    if !(core_radius > 0.0) {
        return Err(GeometryError::Config(format!(
            "core_radius must be > 0, got {core_radius}"
        )));
    }
    let layers = overrides.layers.clone().unwrap_or_else(paper_layers);
    let shell_overhang = overrides.shell_overhang.unwrap_or(paper::SHELL_OVERHANG);
    let wall_z = overrides.cavity_wall_z.unwrap_or(0.0);
    let wall_thickness = overrides.wall_thickness.unwrap_or(paper::WALL_THICKNESS);
    let hole_radius = overrides.hole_radius.unwrap_or(paper::HOLE_RADIUS);
    let domain_r_max = overrides.domain_r_max.unwrap_or(paper::DOMAIN_R_MAX);
    let half_span = overrides.domain_half_span.unwrap_or(paper::DOMAIN_HALF_SPAN);

    let hose = HoseSpec {
        core_radius,
        layers,
        cavity_wall_z: wall_z,
        shell_overhang,
    };
    validate_hose(&hose)?;

    let materials = standard_materials();
    // All layers share the output tip plane; by default flush with the
    // wall's inner face.
    let tip_z = wall_z + overrides.tip_past_wall.unwrap_or(wall_thickness);

    let mut regions = Vec::new();
    regions.push(Region::new(
        RegionShape::Disk {
            r_out: hose.core_radius,
            z_min: tip_z - paper::INNER_LENGTH,
            z_max: tip_z,
        },
        "mu_metal",
        "core",
    ));

    let n_layers = hose.layers.len();
    let mut r = hose.core_radius;
    for (idx, layer) in hose.layers.iter().enumerate() {
        let outermost = idx + 1 == n_layers;
        // Assembly clearance between the stack and the outermost sleeve.
        if outermost && n_layers > 1 {
            r += paper::SLEEVE_CLEARANCE;
        }
        let z_max = tip_z;
        let z_min = if outermost {
            tip_z - layer.length - hose.shell_overhang
        } else {
            tip_z - layer.length
        };
        regions.push(Region::new(
            RegionShape::Annulus { r_in: r, r_out: r + layer.thickness, z_min, z_max },
            &layer.material,
            &format!("shell_{}_{}", idx + 1, layer.material),
        ));
        r += layer.thickness;
    }

    // Coil: in the sleeve bore, abutting the inner stack's input end.
    let coil_turns = overrides.coil_turns.unwrap_or(paper::COIL_TURNS);
    let coil_length = overrides.coil_length.unwrap_or(paper::COIL_LENGTH);
    let stack_input_z = tip_z - paper::INNER_LENGTH;
    let coil = CoilSpec {
        turns: coil_turns,
        radius: overrides.coil_radius.unwrap_or(paper::COIL_RADIUS),
        length: coil_length,
        center_z: overrides
            .coil_center_z
            .unwrap_or(stack_input_z - coil_length / 2.0),
        current: overrides.coil_current.unwrap_or(paper::COIL_CURRENT),
    };

    let wall = Region::new(
        RegionShape::Annulus {
            r_in: hole_radius,
            r_out: domain_r_max,
            z_min: wall_z,
            z_max: wall_z + wall_thickness,
        },
        "aluminum_sc",
        "cavity_wall",
    );

    let probe_z = wall_z + paper::CENTRAL_PROBE_OFFSET;
    let scene = Scene {
        materials,
        regions,
        coil,
        wall,
        probes: vec![(0.0, probe_z), (paper::SIDE_PROBE_RADIUS, probe_z)],
        domain: Domain {
            r_max: domain_r_max,
            z_min: wall_z - half_span,
            z_max: wall_z + half_span,
        },
    };
    scene.validate()?;
    Ok(scene)
}

/// Ferromagnet/superconductor alternation and length ordering of the stack.
fn validate_hose(hose: &HoseSpec) -> Result<(), GeometryError> {
    if !(hose.core_radius > 0.0) {
        return Err(GeometryError::Config("core radius must be > 0".into()));
    }
    if !(hose.shell_overhang >= 0.0) {
        return Err(GeometryError::Config("shell overhang must be >= 0".into()));
    }
    let mut max_inner_length: f64 = paper::INNER_LENGTH.min(
        hose.layers
            .first()
            .map(|l| l.length)
            .unwrap_or(paper::INNER_LENGTH),
    );
    for (idx, layer) in hose.layers.iter().enumerate() {
        if !(layer.thickness > 0.0) {
            return Err(GeometryError::Config(format!(
                "layer {} thickness must be > 0, got {}",
                idx + 1,
                layer.thickness
            )));
        }
        if !(layer.length > 0.0) {
            return Err(GeometryError::Config(format!(
                "layer {} length must be > 0",
                idx + 1
            )));
        }
        // Ferromagnet on even slots (core side), superconductor on odd.
        let want_fm = idx % 2 == 0;
        let is_fm = layer.material == "mu_metal";
        let is_sc = layer.material == "aluminum_sc";
        if !is_fm && !is_sc {
            return Err(GeometryError::Config(format!(
                "layer {} material must be mu_metal or aluminum_sc, got `{}`",
                idx + 1,
                layer.material
            )));
        }
        if want_fm != is_fm {
            return Err(GeometryError::Config(format!(
                "layers must alternate ferromagnet/superconductor starting from the ferromagnetic core; layer {} is `{}`",
                idx + 1,
                layer.material
            )));
        }
        if idx + 1 < hose.layers.len() {
            max_inner_length = max_inner_length.max(layer.length);
        } else {
            let outer_total = layer.length + hose.shell_overhang;
            if outer_total < max_inner_length {
                return Err(GeometryError::Config(format!(
                    "outermost layer span {} m is shorter than an inner layer ({} m)",
                    outer_total, max_inner_length
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

/// Uniform cell grid over r in [0, nr*spacing], z in [z_min, z_min+nz*spacing].
/// Nodes sit at cell corners: (nr+1) x (nz+1) of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nr: usize,
    pub nz: usize,
    pub spacing: f64,
    pub z_min: f64,
}

impl GridSpec {
    /// Smallest grid at the given spacing that covers the scene domain.
    pub fn from_domain(domain: &Domain, spacing: f64) -> Result<Self, GeometryError> {
        if !(spacing > 0.0) {
            return Err(GeometryError::Config(format!(
                "grid spacing must be > 0, got {spacing}"
            )));
        }
        let nr = (domain.r_max / spacing - 1e-9).ceil() as usize;
        let nz = ((domain.z_max - domain.z_min) / spacing - 1e-9).ceil() as usize;
        if nr < 2 || nz < 2 {
            return Err(GeometryError::GridTooSmall);
        }
        Ok(Self { nr, nz, spacing, z_min: domain.z_min })
    }

    pub fn r_max(&self) -> f64 {
        self.nr as f64 * self.spacing
    }

    pub fn z_max(&self) -> f64 {
        self.z_min + self.nz as f64 * self.spacing
    }

    /// Node coordinate.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.spacing, self.z_min + j as f64 * self.spacing)
    }

    /// Cell-centre coordinate of cell (i, j), i in 0..nr, j in 0..nz.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 + 0.5) * self.spacing,
            self.z_min + (j as f64 + 0.5) * self.spacing,
        )
    }

    pub fn cell_count(&self) -> usize {
        self.nr * self.nz
    }

    pub fn node_count(&self) -> usize {
        (self.nr + 1) * (self.nz + 1)
    }
}

/// Cell-centred material map plus the azimuthal source-current density.
#[derive(Debug, Clone)]
pub struct MaterialGrid {
    pub grid: GridSpec,
    /// Relative permeability along z, one entry per cell, r-major
    /// (`cell = i * nz + j`).
    pub mu_axial: Vec<f64>,
    /// Relative permeability along r, same layout.
    pub mu_radial: Vec<f64>,
    /// Azimuthal current density [A/m^2], same layout.
    pub j_phi: Vec<f64>,
}

impl MaterialGrid {
    #[inline]
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i * self.grid.nz + j
    }

    /// Total ampere-turns represented by the source cells [A].
    pub fn total_ampere_turns(&self) -> f64 {
        let area = self.grid.spacing * self.grid.spacing;
        self.j_phi.iter().map(|j| j * area).sum()
    }
}

/// Rasterizes a scene onto the grid. Cells cut by a region boundary take the
/// material of their centre point. Coil current is deposited with exact
/// rectangle-overlap fractions, so total ampere-turns are preserved to
/// rounding for any grid.
pub fn rasterize(scene: &Scene, grid: &GridSpec) -> Result<MaterialGrid, GeometryError> {
    scene.validate()?;
    if grid.r_max() < scene.domain.r_max - 1e-12
        || grid.z_min > scene.domain.z_min + 1e-12
        || grid.z_max() < scene.domain.z_max - 1e-12
    {
        return Err(GeometryError::GridTooSmall);
    }
    let table = scene.material_table();
    // Two-cells-across rule for every band with material contrast; the
    // thinnest offender is the one named.
    let mut offender: Option<(&Region, f64)> = None;
    for region in scene.regions.iter().chain(std::iter::once(&scene.wall)) {
        let m = table
            .get(region.material.as_str())
            .ok_or_else(|| GeometryError::UnknownMaterial(region.material.clone()))?;
        if m.mu_r_axial == 1.0 && m.mu_r_radial == 1.0 {
            continue;
        }
        let thickness = region.shape.radial_thickness();
        if thickness < 2.0 * grid.spacing
            && offender.map_or(true, |(_, t)| thickness < t)
        {
            offender = Some((region, thickness));
        }
    }
    if let Some((region, thickness)) = offender {
        return Err(GeometryError::Resolution {
            layer: region.display_name(),
            thickness,
            spacing: grid.spacing,
        });
    }

    let n_cells = grid.cell_count();
    let mut mu_axial = vec![1.0; n_cells];
    let mut mu_radial = vec![1.0; n_cells];
    let mut j_phi = vec![0.0; n_cells];

    for i in 0..grid.nr {
        for j in 0..grid.nz {
            let (r, z) = grid.cell_center(i, j);
            for region in scene.regions.iter().chain(std::iter::once(&scene.wall)) {
                if region.shape.contains(r, z) {
                    let m = table[region.material.as_str()];
                    let idx = i * grid.nz + j;
                    mu_axial[idx] = m.mu_r_axial;
                    mu_radial[idx] = m.mu_r_radial;
                    break;
                }
            }
        }
    }

    deposit_coil(&scene.coil, grid, &mut j_phi);

    Ok(MaterialGrid { grid: *grid, mu_axial, mu_radial, j_phi })
}

/// Spreads the winding band's ampere-turns over grid cells. Each exact
/// band/cell overlap rectangle is deposited at its own centroid with
/// bilinear cloud-in-cell weights, which preserves the total current and
/// both first moments of the current distribution; the residual placement
/// error is second order in the spacing.
fn deposit_coil(coil: &CoilSpec, grid: &GridSpec, j_phi: &mut [f64]) {
    let band = coil.cross_section();
    let (r0, r1) = (band.r_in(), band.r_out());
    let (z0, z1) = (band.z_min(), band.z_max());
    let h = grid.spacing;
    let total_current = coil.turns as f64 * coil.current;
    let band_area = (r1 - r0) * (z1 - z0);
    let cell_area = h * h;

    let i_lo = ((r0 / h).floor().max(0.0)) as usize;
    let i_hi = (((r1 / h).ceil()) as usize).min(grid.nr);
    let j_lo = (((z0 - grid.z_min) / h).floor().max(0.0)) as usize;
    let j_hi = ((((z1 - grid.z_min) / h).ceil()) as usize).min(grid.nz);

    let mut deposit = |current: f64, rc: f64, zc: f64| {
        // Bilinear weights on the four cell centres around (rc, zc).
        let fr = (rc / h - 0.5).max(0.0);
        let fz = ((zc - grid.z_min) / h - 0.5).max(0.0);
        let i0 = (fr.floor() as usize).min(grid.nr - 2);
        let j0 = (fz.floor() as usize).min(grid.nz - 2);
        let tr = (fr - i0 as f64).clamp(0.0, 1.0);
        let tz = (fz - j0 as f64).clamp(0.0, 1.0);
        let j_unit = current / cell_area;
        j_phi[i0 * grid.nz + j0] += j_unit * (1.0 - tr) * (1.0 - tz);
        j_phi[(i0 + 1) * grid.nz + j0] += j_unit * tr * (1.0 - tz);
        j_phi[i0 * grid.nz + j0 + 1] += j_unit * (1.0 - tr) * tz;
        j_phi[(i0 + 1) * grid.nz + j0 + 1] += j_unit * tr * tz;
    };

    for i in i_lo..i_hi {
        let cr0 = i as f64 * h;
        let cr1 = cr0 + h;
        let lo_r = r0.max(cr0);
        let hi_r = r1.min(cr1);
        if hi_r <= lo_r {
            continue;
        }
        for j in j_lo..j_hi {
            let cz0 = grid.z_min + j as f64 * h;
            let cz1 = cz0 + h;
            let lo_z = z0.max(cz0);
            let hi_z = z1.min(cz1);
            if hi_z <= lo_z {
                continue;
            }
            let fraction = ((hi_r - lo_r) * (hi_z - lo_z)) / band_area;
            deposit(
                total_current * fraction,
                0.5 * (lo_r + hi_r),
                0.5 * (lo_z + hi_z),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_scene_has_expected_structure() {
        let scene = build_paper_scene(&SceneOverrides::default()).unwrap();
        // Core + 8 shells.
        assert_eq!(scene.regions.len(), 9);
        let fm = scene
            .regions
            .iter()
            .filter(|r| r.material == "mu_metal")
            .count();
        let sc = scene
            .regions
            .iter()
            .filter(|r| r.material == "aluminum_sc")
            .count();
        assert_eq!(fm, 5); // core + 4 shells
        assert_eq!(sc, 4);
        assert_eq!(scene.probes.len(), 2);
        assert_eq!(scene.probes[0].0, 0.0);
        // Outermost shell spans 20 mm, inner stack 10 mm.
        let sleeve = scene.regions.last().unwrap();
        let span = sleeve.shape.z_max() - sleeve.shape.z_min();
        assert!((span - 20e-3).abs() < 1e-12);
    }

    #[test]
    fn paper_scene_is_deterministic() {
        let a = build_paper_scene(&SceneOverrides::default()).unwrap();
        let b = build_paper_scene(&SceneOverrides::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn degenerate_stack_keeps_core_wall_and_coil() {
        let overrides = SceneOverrides { layers: Some(vec![]), ..Default::default() };
        let scene = build_paper_scene(&overrides).unwrap();
        assert_eq!(scene.regions.len(), 1);
        assert_eq!(scene.regions[0].label.as_deref(), Some("core"));
    }

    #[test]
    fn invalid_core_radius_is_config_error() {
        let overrides =
            SceneOverrides { core_radius: Some(-1e-3), ..Default::default() };
        let err = build_paper_scene(&overrides).unwrap_err();
        assert!(matches!(err, GeometryError::Config(_)), "{err}");
    }

    #[test]
    fn unknown_override_key_rejected() {
        let err = SceneOverrides::from_json(r#"{"coil_windings": 3}"#).unwrap_err();
        assert!(matches!(err, GeometryError::Config(_)));
        // Known keys parse.
        let ok = SceneOverrides::from_json(r#"{"coil_current": 0.02}"#).unwrap();
        assert_eq!(ok.coil_current, Some(0.02));
    }

    #[test]
    fn scene_json_round_trip_and_unknown_field_rejection() {
        let scene = build_paper_scene(&SceneOverrides::default()).unwrap();
        let text = scene.to_json();
        let back = Scene::from_json(&text).unwrap();
        assert_eq!(scene, back);
        let broken = text.replace("\"materials\"", "\"extra\": 1, \"materials\"");
        assert!(Scene::from_json(&broken).is_err());
    }

    #[test]
    fn non_alternating_layers_rejected() {
        let overrides = SceneOverrides {
            layers: Some(vec![
                HoseLayer { thickness: 1e-4, material: "aluminum_sc".into(), length: 10e-3 },
            ]),
            ..Default::default()
        };
        assert!(build_paper_scene(&overrides).is_err());
    }

    #[test]
    fn rasterize_paper_scene_at_50um() {
        let scene = build_paper_scene(&SceneOverrides::default()).unwrap();
        let grid = GridSpec::from_domain(&scene.domain, 50e-6).unwrap();
        let mg = rasterize(&scene, &grid).unwrap();
        // Ampere-turn conservation to machine precision.
        let expected = scene.coil.turns as f64 * scene.coil.current;
        let got = mg.total_ampere_turns();
        assert!(
            (got - expected).abs() <= 1e-12 * expected.abs(),
            "ampere-turns {got} vs {expected}"
        );
        // Every 100 um shell spans >= 2 cells across: count mu-metal cells in
        // a radial scan through the inner stack.
        let j_mid = ((-3e-3 - grid.z_min) / grid.spacing) as usize; // z = -3 mm
        let mut runs = Vec::new();
        let mut run = 0;
        for i in 0..grid.nr {
            let idx = i * grid.nz + j_mid;
            if mg.mu_axial[idx] > 1.0 {
                run += 1;
            } else if run > 0 {
                runs.push(run);
                run = 0;
            }
        }
        assert!(runs.iter().all(|&n| n >= 2), "shell cell runs {runs:?}");
    }

    #[test]
    fn vacuum_scene_rasterizes_to_unity() {
        let overrides = SceneOverrides {
            layers: Some(vec![]),
            coil_current: Some(0.0),
            ..Default::default()
        };
        let mut scene = build_paper_scene(&overrides).unwrap();
        scene.regions.clear();
        // Shrink the wall away by moving it out of the rasterized band is not
        // possible (it must stay a valid region), so drop it to vacuum.
        scene.wall.material = "vacuum".into();
        let grid = GridSpec::from_domain(&scene.domain, 0.5e-3).unwrap();
        let mg = rasterize(&scene, &grid).unwrap();
        assert!(mg.mu_axial.iter().all(|&m| m == 1.0));
        assert!(mg.mu_radial.iter().all(|&m| m == 1.0));
        assert_eq!(mg.total_ampere_turns(), 0.0);
    }

    #[test]
    fn coarse_grid_names_unresolved_shell() {
        let scene = build_paper_scene(&SceneOverrides::default()).unwrap();
        let grid = GridSpec::from_domain(&scene.domain, 500e-6).unwrap();
        let err = rasterize(&scene, &grid).unwrap_err();
        match err {
            GeometryError::Resolution { layer, thickness, .. } => {
                assert!(layer.contains("mu_metal"), "offender {layer}");
                assert!((thickness - 100e-6).abs() < 1e-12);
            }
            other => panic!("expected resolution error, got {other}"),
        }
    }

    #[test]
    fn ampere_turns_conserved_across_spacings() {
        let scene = build_paper_scene(&SceneOverrides::default()).unwrap();
        for spacing in [50e-6, 40e-6] {
            let grid = GridSpec::from_domain(&scene.domain, spacing).unwrap();
            let mg = rasterize(&scene, &grid).unwrap();
            let expected = scene.coil.turns as f64 * scene.coil.current;
            assert!(
                (mg.total_ampere_turns() - expected).abs() <= 1e-12 * expected,
                "spacing {spacing}"
            );
        }
    }

    fn arb_annulus() -> impl Strategy<Value = RegionShape> {
        (0.0f64..5.0, 0.1f64..5.0, -5.0f64..5.0, 0.1f64..5.0).prop_map(
            |(r_in, dr, z_min, dz)| RegionShape::Annulus {
                r_in,
                r_out: r_in + dr,
                z_min,
                z_max: z_min + dz,
            },
        )
    }

    proptest! {
        #[test]
        fn overlap_detection_symmetric_and_correct(a in arb_annulus(), b in arb_annulus()) {
            prop_assert_eq!(a.overlaps(&b), b.overlaps(&a));
            if a.overlaps(&b) {
                // The intersection box centre must be interior to both.
                let r = 0.5 * (a.r_in().max(b.r_in()) + a.r_out().min(b.r_out()));
                let z = 0.5 * (a.z_min().max(b.z_min()) + a.z_max().min(b.z_max()));
                prop_assert!(a.contains(r, z) && b.contains(r, z));
            } else {
                // Sampled interior points of `a` stay out of `b`.
                for k in 0..16 {
                    let fr = (k % 4) as f64 / 4.0 + 0.125;
                    let fz = (k / 4) as f64 / 4.0 + 0.125;
                    let r = a.r_in() + fr * (a.r_out() - a.r_in());
                    let z = a.z_min() + fz * (a.z_max() - a.z_min());
                    prop_assert!(!b.contains(r, z));
                }
            }
        }

        #[test]
        fn coil_deposit_conserves_ampere_turns(
            radius in 0.5e-3f64..3e-3,
            length in 1e-3f64..6e-3,
            center in -5e-3f64..5e-3,
            current in -0.1f64..0.1,
            spacing_sel in 0usize..3,
        ) {
            let spacing = [50e-6, 130e-6, 370e-6][spacing_sel];
            let coil = CoilSpec { turns: 7, radius, length, center_z: center, current };
            prop_assume!(coil.validate().is_ok());
            let grid = GridSpec { nr: 80, nz: 160, spacing, z_min: -(80.0 * spacing) };
            let mut j = vec![0.0; grid.cell_count()];
            // Keep the band inside the grid.
            let band = coil.cross_section();
            prop_assume!(band.r_out() < grid.r_max());
            prop_assume!(band.z_min() > grid.z_min && band.z_max() < grid.z_max());
            deposit_coil(&coil, &grid, &mut j);
            let total: f64 = j.iter().map(|v| v * spacing * spacing).sum();
            let expected = 7.0 * current;
            prop_assert!((total - expected).abs() <= 1e-12 * expected.abs().max(1e-6));
        }
    }
}
