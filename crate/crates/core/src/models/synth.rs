//! Procedural synthetic faces with exact region masks and attribute labels.
//!
//! A face is drawn from a handful of smooth primitives (skin ellipse, hair cap,
//! eyes, eyebrows, nose, lips and mouth opening). Identity fixes geometry and
//! palette; the five editable attributes move lips, mouth opening, nose size,
//! eyebrow thickness and mouth curvature. Coverage is 4x4 supersampled, and the
//! masks are accumulated from the same coverages, so they agree with the pixels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Mask};
use crate::util::rng_for;

pub const FACE_SIZE: usize = 64;
const SUBSAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Skin,
    Mouth,
    Teeth,
    Nose,
    Eyebrows,
    Eyes,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::Skin,
        Region::Mouth,
        Region::Teeth,
        Region::Nose,
        Region::Eyebrows,
        Region::Eyes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Skin => "skin",
            Region::Mouth => "mouth",
            Region::Teeth => "teeth",
            Region::Nose => "nose",
            Region::Eyebrows => "eyebrows",
            Region::Eyes => "eyes",
        }
    }

    pub fn index(self) -> usize {
        Region::ALL.iter().position(|r| *r == self).expect("region")
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::UnknownRegion(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    WearingLipstick,
    MouthSlightlyOpen,
    BigNose,
    BushyEyebrows,
    Smiling,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::WearingLipstick,
        Attribute::MouthSlightlyOpen,
        Attribute::BigNose,
        Attribute::BushyEyebrows,
        Attribute::Smiling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::WearingLipstick => "wearing_lipstick",
            Attribute::MouthSlightlyOpen => "mouth_slightly_open",
            Attribute::BigNose => "big_nose",
            Attribute::BushyEyebrows => "bushy_eyebrows",
            Attribute::Smiling => "smiling",
        }
    }

    pub fn index(self) -> usize {
        Attribute::ALL
            .iter()
            .position(|a| *a == self)
            .expect("attribute")
    }

    /// Facial regions an edit of this attribute is allowed to touch.
    pub fn regions(self) -> &'static [Region] {
        match self {
            Attribute::WearingLipstick => &[Region::Mouth],
            Attribute::MouthSlightlyOpen => &[Region::Mouth, Region::Teeth],
            Attribute::BigNose => &[Region::Nose],
            Attribute::BushyEyebrows => &[Region::Eyebrows],
            Attribute::Smiling => &[Region::Mouth, Region::Eyebrows, Region::Eyes],
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAttribute(s.to_string()))
    }
}

/// Attribute strengths in `[0, 1]`, indexed by [`Attribute::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeParams([f64; 5]);

impl Default for AttributeParams {
    fn default() -> Self {
        Self([0.0; 5])
    }
}

impl AttributeParams {
    pub fn new(values: [f64; 5]) -> Result<Self> {
        for (a, v) in Attribute::ALL.iter().zip(values) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{a} = {v} is outside [0, 1]")));
            }
        }
        Ok(Self(values))
    }

    /// Parses a name -> strength map; attributes not named default to 0.
    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        let mut values = [0.0; 5];
        for (name, v) in map {
            values[name.parse::<Attribute>()?.index()] = *v;
        }
        Self::new(values)
    }

    pub fn get(&self, a: Attribute) -> f64 {
        self.0[a.index()]
    }

    pub fn with(mut self, a: Attribute, v: f64) -> Result<Self> {
        self.0[a.index()] = v;
        Self::new(self.0)
    }

    pub fn values(&self) -> [f64; 5] {
        self.0
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        Attribute::ALL
            .iter()
            .map(|a| (a.name().to_string(), self.get(*a)))
            .collect()
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(std::array::from_fn(|_| rng.gen_range(0.0..=1.0)))
    }
}

type Rgb = [f64; 3];

/// Geometry and palette fixed by an identity id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub skin: Rgb,
    pub hair: Rgb,
    pub iris: Rgb,
    pub face_rx: f64,
    pub face_ry: f64,
    pub hair_depth: f64,
    pub eye_dx: f64,
    pub eye_y: f64,
    pub eye_rx: f64,
    pub eye_ry: f64,
    pub brow_gap: f64,
    pub brow_len: f64,
    pub brow_arch: f64,
    pub nose_len: f64,
    pub mouth_y: f64,
    pub mouth_w: f64,
}

fn lerp3(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, c: Rgb, amount: f64) -> Rgb {
    c.map(|v| (v + rng.gen_range(-amount..=amount)).clamp(0.02, 0.98))
}

impl IdentityParams {
    pub fn for_identity(identity_id: u32) -> Self {
        let mut rng = rng_for(identity_id as u64, "synthetic-identity");
        let tone = rng.gen_range(0.0..=1.0);
        let skin = jitter(
            &mut rng,
            lerp3([0.95, 0.80, 0.70], [0.50, 0.34, 0.24], tone),
            0.03,
        );
        const HAIR: [Rgb; 5] = [
            [0.10, 0.07, 0.05],
            [0.35, 0.22, 0.12],
            [0.82, 0.66, 0.36],
            [0.58, 0.26, 0.10],
            [0.62, 0.62, 0.64],
        ];
        const IRIS: [Rgb; 4] = [
            [0.28, 0.16, 0.08],
            [0.20, 0.42, 0.62],
            [0.25, 0.50, 0.30],
            [0.10, 0.10, 0.10],
        ];
        let hair_base = HAIR[rng.gen_range(0..HAIR.len())];
        let hair = jitter(&mut rng, hair_base, 0.05);
        let iris_base = IRIS[rng.gen_range(0..IRIS.len())];
        let iris = jitter(&mut rng, iris_base, 0.04);
        Self {
            skin,
            hair,
            iris,
            face_rx: rng.gen_range(17.0..=21.0),
            face_ry: rng.gen_range(22.0..=26.0),
            hair_depth: rng.gen_range(5.0..=9.0),
            eye_dx: rng.gen_range(7.5..=9.5),
            eye_y: rng.gen_range(-6.0..=-3.5),
            eye_rx: rng.gen_range(2.8..=3.6),
            eye_ry: rng.gen_range(1.6..=2.2),
            brow_gap: rng.gen_range(2.8..=4.0),
            brow_len: rng.gen_range(3.6..=5.0),
            brow_arch: rng.gen_range(0.3..=1.2),
            nose_len: rng.gen_range(2.2..=2.8),
            mouth_y: rng.gen_range(10.5..=12.5),
            mouth_w: rng.gen_range(5.0..=7.5),
        }
    }
}

/// Small rigid jitter applied to the whole face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
}

impl Pose {
    pub fn from_seed(pose_seed: u64) -> Self {
        let mut rng = rng_for(pose_seed, "synthetic-pose");
        Self {
            dx: rng.gen_range(-1.0..=1.0),
            dy: rng.gen_range(-1.0..=1.0),
            scale: rng.gen_range(0.97..=1.03),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFace {
    pub image: ImageTensor,
    pub region_masks: BTreeMap<Region, Mask>,
    pub attribute_labels: BTreeMap<Attribute, f64>,
    pub identity_id: u32,
    pub params: AttributeParams,
    pub pose_seed: u64,
}

impl SyntheticFace {
    pub fn mask(&self, region: Region) -> &Mask {
        &self.region_masks[&region]
    }

    /// Soft union (pixelwise max) of the construction masks of `regions`.
    pub fn union_mask(&self, regions: &[Region]) -> Result<Mask> {
        let (first, rest) = regions
            .split_first()
            .ok_or_else(|| Error::invalid("empty region set"))?;
        rest.iter()
            .try_fold(self.mask(*first).clone(), |acc, r| acc.union(self.mask(*r)))
    }
}

/// Coverage of an ellipse at one subsample; `px` is the subsample footprint in face units.
fn ellipse_cov(u: f64, v: f64, cu: f64, cv: f64, rx: f64, ry: f64, px: f64) -> f64 {
    if rx <= 1e-9 || ry <= 1e-9 {
        return 0.0;
    }
    let du = u - cu;
    let dv = v - cv;
    let f = (du / rx).powi(2) + (dv / ry).powi(2) - 1.0;
    let gx = 2.0 * du / (rx * rx);
    let gy = 2.0 * dv / (ry * ry);
    let grad = (gx * gx + gy * gy).sqrt();
    let d = if grad > 1e-12 {
        f / grad
    } else {
        f * rx.min(ry)
    };
    (0.5 - d / px).clamp(0.0, 1.0)
}

fn halfplane_below(v: f64, line: f64, px: f64) -> f64 {
    // coverage of {v >= line}
    (0.5 + (v - line) / px).clamp(0.0, 1.0)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

const BACKGROUND: Rgb = [0.55, 0.60, 0.66];
const SCLERA: Rgb = [0.95, 0.95, 0.93];
const TEETH: Rgb = [0.94, 0.93, 0.88];
const MOUTH_DARK: Rgb = [0.26, 0.06, 0.08];
const LIPSTICK: Rgb = [0.78, 0.10, 0.22];

fn over(dst: &mut Rgb, src: Rgb, alpha: f64) {
    for c in 0..3 {
        dst[c] += (src[c] - dst[c]) * alpha;
    }
}

/// Renders the face for `(identity_id, params, pose_seed)`. Deterministic.
pub fn generate_synthetic_face(
    identity_id: u32,
    params: &AttributeParams,
    pose_seed: u64,
) -> Result<SyntheticFace> {
    let params = AttributeParams::new(params.values())?;
    let id = IdentityParams::for_identity(identity_id);
    let pose = Pose::from_seed(pose_seed);

    let lipstick = params.get(Attribute::WearingLipstick);
    let open = params.get(Attribute::MouthSlightlyOpen);
    let big_nose = params.get(Attribute::BigNose);
    let bushy = params.get(Attribute::BushyEyebrows);
    let smile = params.get(Attribute::Smiling);

    let lip_base = [id.skin[0] * 0.86, id.skin[1] * 0.60, id.skin[2] * 0.62];
    let lip = lerp3(lip_base, LIPSTICK, lipstick);
    let brow_color = id.hair.map(|v| v * 0.7);
    let nose_color = id.skin.map(|v| v * 0.80);

    let hairline = -id.face_ry + id.hair_depth;
    let eye_ry = id.eye_ry * (1.0 - 0.3 * smile);
    let brow_cy = id.eye_y - id.brow_gap - 1.0 * smile;
    let brow_th = 0.5 + 1.3 * bushy;
    let nose_cy = 1.0;
    let nose_rx = 1.3 + 1.7 * big_nose;
    let nose_ry = id.nose_len + 1.0 * big_nose;
    let outer_h = 1.6 + 2.4 * open;
    let inner_h = 2.0 * open;
    let inner_w = id.mouth_w * 0.78;
    let curvature = 2.5 * smile - 0.4;

    let n = FACE_SIZE;
    let cx = n as f64 / 2.0;
    let cy = n as f64 / 2.0 + 1.0;
    let sub = SUBSAMPLES as f64;
    let px = 1.0 / (sub * pose.scale);

    let mut image = ImageTensor::zeros(n, n, 3);
    let mut masks: BTreeMap<Region, Vec<f64>> =
        Region::ALL.iter().map(|r| (*r, vec![0.0; n * n])).collect();

    for y in 0..n {
        for x in 0..n {
            let mut color_acc = [0.0; 3];
            let mut region_acc = [0.0; 6];
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    let fx = x as f64 + (sx as f64 + 0.5) / sub;
                    let fy = y as f64 + (sy as f64 + 0.5) / sub;
                    let u = (fx - cx - pose.dx) / pose.scale;
                    let v = (fy - cy - pose.dy) / pose.scale;

                    let mut c = BACKGROUND;
                    c = lerp3(c, [c[0] * 0.9, c[1] * 0.9, c[2] * 0.9], (v + 32.0) / 64.0);

                    let face = ellipse_cov(u, v, 0.0, 0.0, id.face_rx, id.face_ry, px);
                    let hair = ellipse_cov(u, v, 0.0, -1.0, id.face_rx + 2.5, id.face_ry + 2.0, px)
                        * (1.0 - halfplane_below(v, hairline, px));
                    let shade = 1.0 - 0.08 * (v / id.face_ry) - 0.03 * (u / id.face_rx);
                    over(&mut c, id.skin.map(|s| (s * shade).clamp(0.0, 1.0)), face);
                    over(&mut c, id.hair, hair);
                    let skin = face * (1.0 - hair);

                    let nose = ellipse_cov(u, v, 0.0, nose_cy, nose_rx, nose_ry, px);
                    over(&mut c, nose_color, nose);

                    let mut eyes = 0.0;
                    let mut brows = 0.0;
                    for side in [-1.0, 1.0] {
                        let ex = side * id.eye_dx;
                        let sclera = ellipse_cov(u, v, ex, id.eye_y, id.eye_rx, eye_ry, px);
                        over(&mut c, SCLERA, sclera);
                        let ir = eye_ry.min(1.5);
                        let iris = ellipse_cov(u, v, ex, id.eye_y, ir, ir, px) * sclera;
                        over(&mut c, id.iris, iris);
                        eyes += sclera;

                        let arch = id.brow_arch * ((u - ex) / id.brow_len).powi(2);
                        let brow = ellipse_cov(u, v - arch, ex, brow_cy, id.brow_len, brow_th, px);
                        over(&mut c, brow_color, brow);
                        brows += brow;
                    }

                    let vm = v + curvature * (u / id.mouth_w).powi(2);
                    let outer = ellipse_cov(u, vm, 0.0, id.mouth_y, id.mouth_w, outer_h, px);
                    let inner =
                        ellipse_cov(u, vm, 0.0, id.mouth_y, inner_w, inner_h, px).min(outer);
                    over(&mut c, lip, outer);
                    let depth = if inner_h > 1e-9 {
                        smoothstep(-0.3, 0.5, (vm - id.mouth_y) / inner_h)
                    } else {
                        1.0
                    };
                    over(&mut c, lerp3(TEETH, MOUTH_DARK, depth), inner);

                    for ch in 0..3 {
                        color_acc[ch] += c[ch];
                    }
                    region_acc[Region::Skin.index()] += skin;
                    region_acc[Region::Mouth.index()] += outer - inner;
                    region_acc[Region::Teeth.index()] += inner;
                    region_acc[Region::Nose.index()] += nose;
                    region_acc[Region::Eyebrows.index()] += brows.min(1.0);
                    region_acc[Region::Eyes.index()] += eyes.min(1.0);
                }
            }
            let norm = (SUBSAMPLES * SUBSAMPLES) as f64;
            for (ch, acc) in color_acc.iter().enumerate() {
                image.set(y, x, ch, (acc / norm).clamp(0.0, 1.0));
            }
            for r in Region::ALL {
                masks.get_mut(&r).expect("region")[y * n + x] = region_acc[r.index()] / norm;
            }
        }
    }

    let region_masks = masks
        .into_iter()
        .map(|(r, v)| (r, Mask::from_clamped(n, n, v)))
        .collect();
    let attribute_labels = Attribute::ALL
        .iter()
        .map(|a| (*a, params.get(*a)))
        .collect();
    Ok(SyntheticFace {
        image,
        region_masks,
        attribute_labels,
        identity_id,
        params,
        pose_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn face(open: f64) -> SyntheticFace {
        let p = AttributeParams::new([0.3, open, 0.5, 0.5, 0.2]).unwrap();
        generate_synthetic_face(7, &p, 3).unwrap()
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(face(0.4), face(0.4));
    }

    #[test]
    fn params_outside_unit_interval_are_rejected() {
        assert!(AttributeParams::new([0.0, 1.2, 0.0, 0.0, 0.0]).is_err());
        let mut map = BTreeMap::new();
        map.insert("big_nose".to_string(), -0.1);
        assert!(AttributeParams::from_map(&map).is_err());
        let mut map = BTreeMap::new();
        map.insert("beard".to_string(), 0.5);
        assert!(matches!(
            AttributeParams::from_map(&map),
            Err(Error::UnknownAttribute(_))
        ));
    }

    #[test]
    fn closed_mouth_has_minimal_mouth_area() {
        let areas: Vec<f64> = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|&o| face(o).mask(Region::Mouth).area())
            .collect();
        assert!(areas[1..].iter().all(|a| *a > areas[0]), "{areas:?}");
    }

    #[test]
    fn feature_masks_are_disjoint_and_inside_skin() {
        for id in 0..6 {
            let p = AttributeParams::new([1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
            let f = generate_synthetic_face(id, &p, id as u64).unwrap();
            let skin = f.mask(Region::Skin).values();
            let features = [
                Region::Mouth,
                Region::Teeth,
                Region::Nose,
                Region::Eyebrows,
                Region::Eyes,
            ];
            for i in 0..skin.len() {
                let total: f64 = features.iter().map(|r| f.mask(*r).values()[i]).sum();
                assert!(total <= 1.0 + 1e-9, "overlap at pixel {i}: {total}");
                assert!(total <= skin[i] + 1e-9, "feature outside skin at {i}");
            }
        }
    }

    #[test]
    fn identities_differ_and_values_in_range() {
        let p = AttributeParams::default();
        let a = generate_synthetic_face(1, &p, 0).unwrap();
        let b = generate_synthetic_face(2, &p, 0).unwrap();
        assert!(a.image.mean_abs_diff(&b.image).unwrap() > 0.01);
        assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn names_round_trip() {
        for r in Region::ALL {
            assert_eq!(r.name().parse::<Region>().unwrap(), r);
        }
        for a in Attribute::ALL {
            assert_eq!(a.name().parse::<Attribute>().unwrap(), a);
        }
        assert!("ears".parse::<Region>().is_err());
    }
}
