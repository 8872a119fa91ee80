//! Directional attribute editing in the generator's style space: masks,
//! smoothing, the reconstruction / classification / area losses, the
//! latent-to-noise-map resampler and masked fusion.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, SparseMap, Var};
use crate::image::{ImageTensor, Mask};
use crate::models::stack::ModelStack;
use crate::models::synth::{Attribute, Region};
use crate::models::traits::{
    check_image, AttributeClassifier, FaceParser, NoiseMap, NoiseMapSet, StyleGenerator,
    StyleVector,
};
use crate::resample::{adaptive_avg_pool, bilinear, gaussian_blur};

/// Clamp applied to both area statistics before the two-point KL.
pub const AREA_CLAMP: f64 = 1e-4;
pub const DEFAULT_SIGMA_B: f64 = 1.5;

const FEATURES: [Region; 5] = [
    Region::Mouth,
    Region::Teeth,
    Region::Nose,
    Region::Eyebrows,
    Region::Eyes,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeTarget {
    pub attribute: Attribute,
    pub strength: f64,
}

/// Attributes to steer toward, with target strengths, and the area scale.
/// A spec with no attributes disables editing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct AttributeSpec {
    attributes: Vec<AttributeTarget>,
    area_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    attributes: Vec<RawTarget>,
    #[serde(default = "one")]
    area_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    name: String,
    strength: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawSpec> for AttributeSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let attributes = raw
            .attributes
            .into_iter()
            .map(|t| {
                Ok(AttributeTarget {
                    attribute: t.name.parse()?,
                    strength: t.strength,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        AttributeSpec::new(attributes, raw.area_scale)
    }
}

impl From<AttributeSpec> for RawSpec {
    fn from(spec: AttributeSpec) -> Self {
        RawSpec {
            attributes: spec
                .attributes
                .iter()
                .map(|t| RawTarget {
                    name: t.attribute.name().to_string(),
                    strength: t.strength,
                })
                .collect(),
            area_scale: spec.area_scale,
        }
    }
}

impl Default for AttributeSpec {
    fn default() -> Self {
        Self::new(
            vec![
                AttributeTarget {
                    attribute: Attribute::WearingLipstick,
                    strength: 0.95,
                },
                AttributeTarget {
                    attribute: Attribute::MouthSlightlyOpen,
                    strength: 0.95,
                },
            ],
            1.0,
        )
        .expect("default spec")
    }
}

impl AttributeSpec {
    pub fn new(attributes: Vec<AttributeTarget>, area_scale: f64) -> Result<Self> {
        for t in &attributes {
            if !(t.strength > 0.0 && t.strength < 1.0) {
                return Err(Error::invalid(format!(
                    "strength of {} must lie in (0, 1), got {}",
                    t.attribute, t.strength
                )));
            }
        }
        for (i, t) in attributes.iter().enumerate() {
            if attributes[..i].iter().any(|u| u.attribute == t.attribute) {
                return Err(Error::invalid(format!(
                    "duplicate attribute {}",
                    t.attribute
                )));
            }
        }
        if !(area_scale > 0.0 && area_scale.is_finite()) {
            return Err(Error::invalid("area_scale must be finite and > 0"));
        }
        Ok(Self {
            attributes,
            area_scale,
        })
    }

    /// The spec that edits nothing.
    pub fn none() -> Self {
        Self {
            attributes: Vec::new(),
            area_scale: 1.0,
        }
    }

    /// Same attributes, every strength set to `strength`.
    pub fn with_strength(&self, strength: f64) -> Result<Self> {
        let attributes = self
            .attributes
            .iter()
            .map(|t| AttributeTarget {
                attribute: t.attribute,
                strength,
            })
            .collect();
        Self::new(attributes, self.area_scale)
    }

    pub fn with_area_scale(&self, area_scale: f64) -> Result<Self> {
        Self::new(self.attributes.clone(), area_scale)
    }

    pub fn attributes(&self) -> &[AttributeTarget] {
        &self.attributes
    }

    pub fn area_scale(&self) -> f64 {
        self.area_scale
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Union of the regions of every attribute, in canonical order.
    pub fn regions(&self) -> Vec<Region> {
        Region::ALL
            .into_iter()
            .filter(|r| {
                self.attributes
                    .iter()
                    .any(|t| t.attribute.regions().contains(r))
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn ensure_known(&self, classifier: &dyn AttributeClassifier) -> Result<()> {
        for t in &self.attributes {
            classifier.attribute_column(t.attribute)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditLossWeights {
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
}

impl Default for EditLossWeights {
    fn default() -> Self {
        Self {
            lambda4: 2.0,
            lambda5: 0.005,
            lambda6: 1.0,
        }
    }
}

impl EditLossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda4, self.lambda5, self.lambda6];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid(
                "edit weights must be >= 0 with one positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditBreakdown {
    pub l_rec: f64,
    pub l_cls: f64,
    pub l_size: f64,
    pub l_edit: f64,
    pub grad_rec: Mat,
    pub grad_cls: Mat,
    pub grad_size: Mat,
    pub grad_edit: Mat,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Blur operator on `H x W` single-channel rows; identity for `sigma = 0`.
fn blur_map(hw: (usize, usize), sigma: f64) -> Result<Option<Arc<SparseMap>>> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(None);
    }
    Ok(Some(Arc::new(gaussian_blur(hw, 1, sigma)?)))
}

fn apply_blur(mask: &Mask, blur: Option<&SparseMap>) -> Mask {
    match blur {
        None => mask.clone(),
        Some(b) => {
            let mut out = vec![0.0; mask.values().len()];
            b.apply_slice(mask.values(), &mut out);
            Mask::from_clamped(mask.height(), mask.width(), out)
        }
    }
}

/// Gaussian edge smoothing with reflect padding, clamped to `[0, 1]`.
pub fn smooth_mask(mask: &Mask, sigma: f64) -> Result<Mask> {
    let blur = blur_map((mask.height(), mask.width()), sigma)?;
    Ok(apply_blur(mask, blur.as_deref()))
}

/// Smoothed skin mask with the facial features cut out, so features stay free
/// to change under the reconstruction loss.
pub fn skin_mask(image: &ImageTensor, parser: &dyn FaceParser, sigma: f64) -> Result<Mask> {
    let skin = parser.parse(image, &[Region::Skin])?;
    let features = parser.parse(image, &FEATURES)?;
    let values = skin
        .values()
        .iter()
        .zip(features.values())
        .map(|(s, f)| s * (1.0 - f))
        .collect();
    smooth_mask(
        &Mask::from_clamped(skin.height(), skin.width(), values),
        sigma,
    )
}

/// Smoothed mask of the spec's regions on the current image; all zeros for an
/// empty spec.
pub fn update_edit_mask(
    image: &ImageTensor,
    spec: &AttributeSpec,
    parser: &dyn FaceParser,
    sigma: f64,
) -> Result<Mask> {
    check_sigma(sigma)?;
    if spec.is_empty() {
        return Ok(Mask::filled(image.height(), image.width(), 0.0));
    }
    smooth_mask(&parser.parse(image, &spec.regions())?, sigma)
}

/// `src * (1 - m) + edited * m`, clamped to `[0, 1]`.
pub fn fuse(src: &ImageTensor, edited: &ImageTensor, mask: &Mask) -> Result<ImageTensor> {
    src.ensure_same_shape(edited)?;
    mask.ensure_matches(src)?;
    let c = src.channels();
    let m = mask.values();
    let data = src
        .data()
        .iter()
        .zip(edited.data())
        .enumerate()
        .map(|(i, (a, b))| {
            let k = m[i / c];
            (a * (1.0 - k) + b * k).clamp(0.0, 1.0)
        })
        .collect();
    ImageTensor::new(src.height(), src.width(), c, data)
}

/// Mean of the smoothed region mask of `x`.
pub fn area_statistic(
    x: &ImageTensor,
    regions: &[Region],
    parser: &dyn FaceParser,
    sigma: f64,
) -> Result<f64> {
    if regions.is_empty() {
        return Err(Error::invalid("empty region set"));
    }
    let m = smooth_mask(&parser.parse(x, regions)?, sigma)?;
    Ok(m.area() / m.values().len() as f64)
}

/// Channel-averaged latent perturbation resampled to each noise-map shape:
/// adaptive average pooling when no dimension grows, bilinear otherwise.
pub fn map_perturbation(
    delta: &Mat,
    latent_shape: (usize, usize, usize),
    shapes: &[(usize, usize)],
) -> Result<NoiseMapSet> {
    if shapes.is_empty() {
        return Err(Error::invalid("empty noise shape list"));
    }
    let (c, h, w) = latent_shape;
    if delta.len() != c * h * w {
        return Err(Error::shape(c * h * w, delta.len()));
    }
    let flat: Vec<f64> = delta.iter().copied().collect();
    let plane: Vec<f64> = (0..h * w)
        .map(|i| (0..c).map(|ch| flat[ch * h * w + i]).sum::<f64>() / c as f64)
        .collect();
    let maps = shapes
        .iter()
        .map(|&(th, tw)| {
            let map = if th <= h && tw <= w {
                adaptive_avg_pool((h, w), (th, tw), 1)
            } else {
                bilinear((h, w), (th, tw), 1)
            };
            let mut values = vec![0.0; th * tw];
            map.apply_slice(&plane, &mut values);
            NoiseMap {
                height: th,
                width: tw,
                values,
            }
        })
        .collect();
    Ok(NoiseMapSet { maps })
}

/// `a ln(a/b) + (1-a) ln((1-a)/(1-b))` for a constant `a` and a `1 x 1` node `b`.
fn two_point_kl(g: &Graph, a: f64, b: Var) -> Var {
    let entropy = xlnx(a) + xlnx(1.0 - a);
    let lb = g.scale(g.ln(b), -a);
    let lnb = g.scale(g.ln(g.affine(b, -1.0, 1.0)), -(1.0 - a));
    g.affine(g.add(lb, lnb), 1.0, entropy)
}

fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// The style code as a differentiable input and the rendered image.
struct StyleGraph {
    g: Graph,
    w: Var,
    image: Var,
}

impl StyleGraph {
    fn new(generator: &dyn StyleGenerator, w: &StyleVector, noise: &NoiseMapSet) -> Result<Self> {
        let (layers, dim) = generator.style_shape();
        if (w.layers, w.dim) != (layers, dim) {
            return Err(Error::shape((layers, dim), (w.layers, w.dim)));
        }
        noise.ensure_shapes(&generator.noise_shapes())?;
        let g = Graph::new();
        let wv = g.input(w.to_row());
        let nv = noise.constants(&g);
        let image = generator.generate_var(&g, wv, &nv);
        Ok(Self { g, w: wv, image })
    }

    fn grad(&self, out: Var) -> Mat {
        let dim = self.g.shape(self.w);
        self.g.backward(out).get_or_zeros(self.w, dim)
    }

    fn rec_term(&self, src: &ImageTensor, mask: &Mask) -> Var {
        let g = &self.g;
        let diff = g.sub(g.constant(src.to_row()), self.image);
        g.sum_sq(g.mul(diff, g.constant(mask.broadcast_row(src.channels()))))
    }

    fn cls_term(&self, classifier: &dyn AttributeClassifier, spec: &AttributeSpec) -> Result<Var> {
        let g = &self.g;
        if spec.is_empty() {
            return Ok(g.scalar_constant(0.0));
        }
        let probs = classifier.classify_var(g, self.image);
        let mut total: Option<Var> = None;
        for t in spec.attributes() {
            let col = classifier.attribute_column(t.attribute)?;
            let kl = two_point_kl(g, t.strength, g.slice_cols(probs, col, col + 1));
            total = Some(match total {
                None => kl,
                Some(acc) => g.add(acc, kl),
            });
        }
        Ok(g.scale(
            total.expect("nonempty"),
            1.0 / spec.attributes().len() as f64,
        ))
    }

    fn size_term(
        &self,
        parser: &dyn FaceParser,
        regions: &[Region],
        target: f64,
        blur: Option<&Arc<SparseMap>>,
    ) -> Result<Var> {
        let g = &self.g;
        if regions.is_empty() {
            return Ok(g.scalar_constant(0.0));
        }
        let b = soft_area_var(g, parser, self.image, regions, blur)?;
        Ok(two_point_kl(
            g,
            target,
            g.clamp(b, AREA_CLAMP, 1.0 - AREA_CLAMP),
        ))
    }
}

/// Area statistic of the parser's differentiable head on an image row.
fn soft_area_var(
    g: &Graph,
    parser: &dyn FaceParser,
    image: Var,
    regions: &[Region],
    blur: Option<&Arc<SparseMap>>,
) -> Result<Var> {
    let m = parser.parse_var(g, image, regions)?;
    let m = match blur {
        None => m,
        Some(b) => g.clamp(g.sparse(m, b), 0.0, 1.0),
    };
    Ok(g.mean(m))
}

/// Clamped `area_scale * S(src)` under the differentiable head.
fn area_target(
    src: &ImageTensor,
    parser: &dyn FaceParser,
    spec: &AttributeSpec,
    blur: Option<&Arc<SparseMap>>,
) -> Result<f64> {
    let regions = spec.regions();
    if regions.is_empty() {
        return Ok(0.5);
    }
    let g = Graph::new();
    let s = soft_area_var(&g, parser, g.constant(src.to_row()), &regions, blur)?;
    let a = spec.area_scale() * g.scalar(s);
    if !a.is_finite() {
        return Err(Error::NonFinite("area target".into()));
    }
    Ok(a.clamp(AREA_CLAMP, 1.0 - AREA_CLAMP))
}

/// Masked reconstruction error between `src` and `G(w, noise)`.
pub fn loss_rec(
    src: &ImageTensor,
    w: &StyleVector,
    noise: &NoiseMapSet,
    generator: &dyn StyleGenerator,
    mask: &Mask,
) -> Result<(f64, Mat)> {
    check_image(src, generator.image_shape())?;
    mask.ensure_matches(src)?;
    let sg = StyleGraph::new(generator, w, noise)?;
    let l = sg.rec_term(src, mask);
    Ok((sg.g.scalar(l), sg.grad(l)))
}

/// Mean KL from each target two-point distribution to the classifier's.
pub fn loss_cls(
    w: &StyleVector,
    noise: &NoiseMapSet,
    generator: &dyn StyleGenerator,
    classifier: &dyn AttributeClassifier,
    spec: &AttributeSpec,
) -> Result<(f64, Mat)> {
    spec.ensure_known(classifier)?;
    let sg = StyleGraph::new(generator, w, noise)?;
    let l = sg.cls_term(classifier, spec)?;
    Ok((sg.g.scalar(l), sg.grad(l)))
}

/// KL between the scaled source area and the generated image's area.
pub fn loss_size(
    src: &ImageTensor,
    w: &StyleVector,
    noise: &NoiseMapSet,
    generator: &dyn StyleGenerator,
    parser: &dyn FaceParser,
    spec: &AttributeSpec,
    sigma: f64,
) -> Result<(f64, Mat)> {
    check_image(src, generator.image_shape())?;
    let blur = blur_map((src.height(), src.width()), sigma)?;
    let a = area_target(src, parser, spec, blur.as_ref())?;
    let sg = StyleGraph::new(generator, w, noise)?;
    let l = sg.size_term(parser, &spec.regions(), a, blur.as_ref())?;
    Ok((sg.g.scalar(l), sg.grad(l)))
}

/// Source-side quantities for the editing objective of one defense phase.
pub struct EditObjective<'a> {
    models: &'a ModelStack,
    src: ImageTensor,
    skin: Mask,
    spec: AttributeSpec,
    regions: Vec<Region>,
    area_target: f64,
    blur: Option<Arc<SparseMap>>,
    weights: EditLossWeights,
}

impl<'a> EditObjective<'a> {
    pub fn new(
        models: &'a ModelStack,
        src: &ImageTensor,
        spec: &AttributeSpec,
        weights: EditLossWeights,
        sigma: f64,
    ) -> Result<Self> {
        weights.validate()?;
        check_image(src, models.generator.image_shape())?;
        spec.ensure_known(models.classifier.as_ref())?;
        let blur = blur_map((src.height(), src.width()), sigma)?;
        Ok(Self {
            models,
            skin: skin_mask(src, models.parser.as_ref(), sigma)?,
            area_target: area_target(src, models.parser.as_ref(), spec, blur.as_ref())?,
            regions: spec.regions(),
            src: src.clone(),
            spec: spec.clone(),
            blur,
            weights,
        })
    }

    pub fn skin_mask(&self) -> &Mask {
        &self.skin
    }

    pub fn area_target(&self) -> f64 {
        self.area_target
    }

    pub fn evaluate(&self, w: &StyleVector, noise: &NoiseMapSet) -> Result<EditBreakdown> {
        let sg = StyleGraph::new(self.models.generator.as_ref(), w, noise)?;
        let rec = sg.rec_term(&self.src, &self.skin);
        let cls = sg.cls_term(self.models.classifier.as_ref(), &self.spec)?;
        let size = sg.size_term(
            self.models.parser.as_ref(),
            &self.regions,
            self.area_target,
            self.blur.as_ref(),
        )?;
        let (grad_rec, grad_cls, grad_size) = (sg.grad(rec), sg.grad(cls), sg.grad(size));
        let (l_rec, l_cls, l_size) = (sg.g.scalar(rec), sg.g.scalar(cls), sg.g.scalar(size));
        let k = self.weights;
        let l_edit = k.lambda4 * l_rec + k.lambda5 * l_cls + k.lambda6 * l_size;
        let grad_edit = &grad_rec * k.lambda4 + &grad_cls * k.lambda5 + &grad_size * k.lambda6;
        if !l_edit.is_finite() || !grad_edit.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("edit loss".into()));
        }
        Ok(EditBreakdown {
            l_rec,
            l_cls,
            l_size,
            l_edit,
            grad_rec,
            grad_cls,
            grad_size,
            grad_edit,
        })
    }
}

/// Weighted editing objective at `w`; the skin mask and area target come from `src`.
pub fn loss_edit(
    w: &StyleVector,
    noise: &NoiseMapSet,
    src: &ImageTensor,
    models: &ModelStack,
    spec: &AttributeSpec,
    weights: EditLossWeights,
    sigma: f64,
) -> Result<EditBreakdown> {
    EditObjective::new(models, src, spec, weights, sigma)?.evaluate(w, noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Mask {
        Mask::from_clamped(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect())
    }

    #[test]
    fn smoothing_zero_sigma_is_identity() {
        let m = mask(5, 7, |y, x| ((y + x) % 2) as f64);
        assert_eq!(smooth_mask(&m, 0.0).unwrap(), m);
        assert!(smooth_mask(&m, -1.0).is_err());
    }

    #[test]
    fn smoothing_keeps_ones() {
        let m = Mask::filled(9, 9, 1.0);
        let s = smooth_mask(&m, 1.5).unwrap();
        assert!(s.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn impulse_response_is_gaussian() {
        let m = mask(9, 9, |y, x| if (y, x) == (4, 4) { 1.0 } else { 0.0 });
        let s = smooth_mask(&m, 1.0).unwrap();
        // Direct 2-D kernel, truncated at 3 sigma and normalised.
        let k: Vec<f64> = (-3..=3)
            .map(|d: i32| (-(d * d) as f64 / 2.0).exp())
            .collect();
        let z: f64 = k.iter().sum();
        for y in 0..9 {
            for x in 0..9 {
                let (dy, dx) = (y as i32 - 4, x as i32 - 4);
                let want = if dy.abs() <= 3 && dx.abs() <= 3 {
                    k[(dy + 3) as usize] * k[(dx + 3) as usize] / (z * z)
                } else {
                    0.0
                };
                assert!((s.get(y, x) - want).abs() < 1e-12, "({y},{x})");
            }
        }
    }

    #[test]
    fn fuse_blends() {
        let a = ImageTensor::filled(4, 4, 3, 0.2);
        let b = ImageTensor::filled(4, 4, 3, 0.6);
        let out = fuse(&a, &b, &Mask::filled(4, 4, 0.5)).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.4).abs() < 1e-12));
        assert_eq!(fuse(&a, &b, &Mask::filled(4, 4, 0.0)).unwrap(), a);
        assert_eq!(fuse(&a, &b, &Mask::filled(4, 4, 1.0)).unwrap(), b);
        assert!(fuse(&a, &b, &Mask::filled(3, 4, 1.0)).is_err());
    }

    #[test]
    fn two_point_kl_values() {
        let g = Graph::new();
        let b = g.scalar_constant(0.5);
        let v = g.scalar(two_point_kl(&g, 0.95, b));
        let want = 0.95 * 1.9f64.ln() + 0.05 * 0.1f64.ln();
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.49475).abs() < 1e-3);
        let b = g.scalar_constant(0.1);
        let v = g.scalar(two_point_kl(&g, 0.2, b));
        let want = 0.2 * 2f64.ln() + 0.8 * (0.8f64 / 0.9).ln();
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.04442).abs() < 1e-4);
        let b = g.scalar_constant(0.3);
        assert!(g.scalar(two_point_kl(&g, 0.3, b)).abs() < 1e-15);
    }

    #[test]
    fn perturbation_mapping() {
        let shapes = [(4, 4), (8, 8), (16, 16)];
        let c = Mat::from_elem((1, 4 * 8 * 8), 0.3);
        let maps = map_perturbation(&c, (4, 8, 8), &shapes).unwrap();
        for m in &maps.maps {
            assert!(m.values.iter().all(|v| (v - 0.3).abs() < 1e-12));
        }
        let d = Mat::from_shape_fn((1, 256), |(_, j)| (j as f64 * 0.37).sin());
        let maps = map_perturbation(&d, (4, 8, 8), &shapes).unwrap();
        let mean_in = d.sum() / 256.0;
        let pooled = &maps.maps[0].values;
        assert!((pooled.iter().sum::<f64>() / 16.0 - mean_in).abs() < 1e-12);
        assert!(map_perturbation(&d, (4, 8, 8), &[]).is_err());
    }

    #[test]
    fn bilinear_upsampling_of_columns() {
        // Two channels with identical [[0,1],[0,1]] planes.
        let d = Mat::from_shape_vec((1, 8), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let maps = map_perturbation(&d, (2, 2, 2), &[(4, 4)]).unwrap();
        let row = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                assert!((maps.maps[0].values[y * 4 + x] - row[x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spec_json() {
        let spec = AttributeSpec::from_json(
            r#"{"attributes":[{"name":"wearing_lipstick","strength":0.9}],"area_scale":1.2}"#,
        )
        .unwrap();
        assert_eq!(spec.attributes()[0].attribute, Attribute::WearingLipstick);
        assert_eq!(spec.regions(), vec![Region::Mouth]);
        let back = AttributeSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let err = AttributeSpec::from_json(r#"{"attributes":[{"name":"hat","strength":0.9}]}"#);
        assert!(err.is_err());
        assert!(
            AttributeSpec::from_json(r#"{"attributes":[{"name":"smiling","strength":1.0}]}"#)
                .is_err()
        );
        assert!(AttributeSpec::from_json(r#"{"attributes":[]}"#)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn default_spec_regions() {
        assert_eq!(
            AttributeSpec::default().regions(),
            vec![Region::Mouth, Region::Teeth]
        );
    }
}
