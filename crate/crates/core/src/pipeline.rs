//! The full fusion pipeline over one wide/telephoto pair.

use std::time::{Duration, Instant};

use crate::config::FusionConfig;
use crate::error::{FuseError, Result};
use crate::flowio::{estimate_flow_diagnostic, DiagnosticParams};
use crate::imagecore::{check_rect, resize_bilinear, BinaryMask, FlowField, ImageBuffer};
use crate::occlusion::{compute_occlusion, occlusion_area_pct};
use crate::toneblend::{compose_full_view, fuse_overlap_masked, OverlapFusion};
use crate::viewtransition::{
    clip_bound_excess, clip_flow, distance_map, target_flow, transform_flow, warp_tele, ViewTransition,
};
use crate::warp::{multi_warp_average, priority_from_flow, WarpResult};

/// Overlap rectangle `(x, y, width, height)` in wide-frame pixels.
pub type Rect = (usize, usize, usize, usize);

/// Centred rectangle of half the frame size.
pub fn default_overlap(width: usize, height: usize) -> Rect {
    let (w, h) = ((width / 2).max(1), (height / 2).max(1));
    ((width - w) / 2, (height - h) / 2, w, h)
}

#[derive(Debug, Clone, Default)]
pub struct StageTimings(pub Vec<(&'static str, Duration)>);

impl StageTimings {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        self.0.push((stage, t0.elapsed()));
        Ok(out)
    }

    pub fn get(&self, stage: &str) -> Option<Duration> {
        self.0.iter().find(|(s, _)| *s == stage).map(|(_, d)| *d)
    }
}

pub const STAGES: [&str; 10] = [
    "target_flow",
    "distance_map",
    "clip_flow",
    "transform_flow",
    "warp_tele",
    "warp_wide",
    "occlusion",
    "fuse_overlap",
    "compose_full_view",
    "metrics",
];

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub transition: ViewTransition,
    /// Telephoto image in the output view (`I_T^O`).
    pub tele_view: WarpResult,
    /// Wide image in the output view (`I_W^O`).
    pub wide_view: WarpResult,
    pub occ_original: BinaryMask,
    pub occ_transformed: BinaryMask,
    /// Pixels the blend takes from the wide view.
    pub blend_mask: BinaryMask,
    pub fusion: OverlapFusion,
    pub full: ImageBuffer,
    pub metrics: Metrics,
    pub timings: StageTimings,
}

impl FusionOutput {
    pub fn overlap(&self) -> &ImageBuffer {
        &self.fusion.image
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub occ_pct_original: f64,
    pub occ_pct_transformed: f64,
    /// Transformed over original occlusion area; 0 when neither has any.
    pub occ_ratio: f64,
    /// `max(|f_hat - f| - ratio * dist)`; never positive.
    pub bound_excess: f64,
}

impl Metrics {
    pub fn from_masks(original: &BinaryMask, transformed: &BinaryMask, bound_excess: f64) -> Metrics {
        let (a, b) = (occlusion_area_pct(original), occlusion_area_pct(transformed));
        Metrics {
            occ_pct_original: a,
            occ_pct_transformed: b,
            occ_ratio: if a > 0.0 { b / a } else { 0.0 },
            bound_excess,
        }
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "occlusion_pct_original={:.4}\nocclusion_pct_transformed={:.4}\nocclusion_ratio={:.4}\nclip_bound_excess={:.6e}\nclip_bound_ok={}\n",
            self.occ_pct_original,
            self.occ_pct_transformed,
            self.occ_ratio,
            self.bound_excess,
            self.bound_excess <= 0.0
        )
    }
}

/// Metrics of a flow on its own, without images.
pub fn flow_metrics(f: &FlowField, cfg: &FusionConfig) -> Result<Metrics> {
    cfg.validate()?;
    let vt = ViewTransition::compute(f, cfg)?;
    Ok(Metrics::from_masks(
        &compute_occlusion(f, cfg),
        &compute_occlusion(&vt.transformed, cfg),
        vt.bound_excess(f, cfg.ratio),
    ))
}

/// Prepare the telephoto image and the flow for a given overlap.
///
/// The telephoto image is resized to the overlap size when needed. Without
/// a flow, one is estimated by block matching and its unreliable pixels are
/// filled from their neighbours.
pub fn prepare_inputs(wide: &ImageBuffer, tele: &ImageBuffer, flow: Option<FlowField>, rect: Rect) -> Result<(ImageBuffer, ImageBuffer, FlowField)> {
    let (rx, ry, rw, rh) = rect;
    check_rect(rx, ry, rw, rh, wide.width(), wide.height()).map_err(|e| e.in_stage("overlap"))?;
    let wide_o = wide.crop(rx, ry, rw, rh)?;
    let mut tele_o = if tele.dims() == (rw, rh) { tele.clone() } else { resize_bilinear(tele, rw, rh) };
    if tele_o.channels() != wide_o.channels() {
        tele_o = tele_o.to_rgb();
    }
    let flow = match flow {
        Some(f) => {
            crate::error::check_dims((rw, rh), f.dims()).map_err(|e| e.in_stage("flow"))?;
            f
        }
        None => estimate_flow_diagnostic(&wide_o, &tele_o, &DiagnosticParams::default())
            .map_err(|e| e.in_stage("flow estimation"))?,
    };
    let flow = if flow.is_fully_valid() {
        flow
    } else {
        crate::viewtransition::fill_empty(&flow).map_err(|e| e.in_stage("flow"))?
    };
    Ok((wide_o, tele_o, flow))
}

/// Run every stage. `wide` is the full wide frame, `tele` is already on the
/// overlap grid and `flow` is the backward flow on that grid.
pub fn run_pipeline(wide: &ImageBuffer, tele: &ImageBuffer, flow: &FlowField, rect: Rect, cfg: &FusionConfig) -> Result<FusionOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let (rx, ry, rw, rh) = rect;
    check_rect(rx, ry, rw, rh, wide.width(), wide.height()).map_err(|e| e.in_stage("overlap"))?;
    crate::error::check_dims((rw, rh), tele.dims()).map_err(|e| e.in_stage("tele"))?;
    crate::error::check_dims((rw, rh), flow.dims()).map_err(|e| e.in_stage("flow"))?;
    if !flow.is_fully_valid() {
        return Err(FuseError::Parameter("flow has invalid pixels".into()).in_stage("flow"));
    }
    let wide_o = wide.crop(rx, ry, rw, rh)?;
    let mut t = StageTimings::default();

    let (target, foreground) = t.run("target_flow", || target_flow(flow, cfg))?;
    let distance = t.run("distance_map", || Ok(distance_map(flow, cfg)))?;
    let clipped = t.run("clip_flow", || clip_flow(flow, &target, &distance, cfg.ratio))?;
    let transformed = t.run("transform_flow", || transform_flow(flow, &clipped, cfg.transition))?;
    let tele_view = t.run("warp_tele", || warp_tele(tele, &transformed))?;
    let wide_view = t.run("warp_wide", || {
        multi_warp_average(&wide_o, &clipped.sub(flow), &priority_from_flow(flow), cfg)
    })?;
    let (occ_original, occ_transformed) =
        t.run("occlusion", || Ok((compute_occlusion(flow, cfg), compute_occlusion(&transformed, cfg))))?;
    let blend_mask = occ_transformed.union(&tele_view.validity.not());
    let fusion = t.run("fuse_overlap", || {
        fuse_overlap_masked(&tele_view.image, &wide_view.image, &blend_mask, &wide_view.validity, cfg)
    })?;
    let full = t.run("compose_full_view", || compose_full_view(&fusion.image, wide, (rx, ry), cfg))?;
    let metrics = t.run("metrics", || {
        Ok(Metrics::from_masks(&occ_original, &occ_transformed, clip_bound_excess(flow, &clipped, &distance, cfg.ratio)))
    })?;
    Ok(FusionOutput {
        transition: ViewTransition { target, foreground, distance, clipped, transformed },
        tele_view,
        wide_view,
        occ_original,
        occ_transformed,
        blend_mask,
        fusion,
        full,
        metrics,
        timings: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, Layer, SceneSpec, Texture};
    use crate::warp::backward_warp;

    fn scene() -> crate::synth::Scene {
        let spec = SceneSpec {
            width: 160,
            height: 128,
            background_disparity: (4.0, 0.0),
            layers: vec![Layer { rect: (60, 40, 50, 40), disparity: (18.0, 2.0), texture: Texture::noise(3, 5.0) }],
            ..Default::default()
        };
        generate_scene(&spec).unwrap()
    }

    fn cfg() -> FusionConfig {
        FusionConfig { kernel: 61, rhe_block: 40, rhe_stride: 20, ..Default::default() }
    }

    #[test]
    fn full_frame_run_is_complete() {
        let s = scene();
        let out = run_pipeline(&s.wide, &s.tele, &s.gt_flow, (0, 0, 160, 128), &cfg()).unwrap();
        assert!(out.full.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert!(out.metrics.bound_excess <= 0.0);
        assert!(out.metrics.occ_pct_transformed < out.metrics.occ_pct_original);
        for stage in STAGES.iter() {
            assert!(out.timings.get(stage).is_some(), "{stage}");
        }
    }

    #[test]
    fn zero_ratio_degrades_to_plain_warp() {
        let s = scene();
        let c = FusionConfig { ratio: 0.0, ..cfg() };
        let out = run_pipeline(&s.wide, &s.tele, &s.gt_flow, (0, 0, 160, 128), &c).unwrap();
        assert_eq!(out.tele_view, backward_warp(&s.tele, &s.gt_flow));
        assert_eq!(out.metrics.occ_pct_original, out.metrics.occ_pct_transformed);
    }

    #[test]
    fn errors_name_the_stage() {
        let s = scene();
        let err = run_pipeline(&s.wide, &s.tele, &s.gt_flow, (100, 0, 160, 128), &cfg()).unwrap_err();
        assert!(err.to_string().starts_with("overlap:"), "{err}");
        let small = FlowField::zeros(10, 10);
        let err = run_pipeline(&s.wide, &s.tele, &small, (0, 0, 160, 128), &cfg()).unwrap_err();
        assert!(err.to_string().starts_with("flow:"), "{err}");
    }

    #[test]
    fn default_overlap_is_centred_half() {
        assert_eq!(default_overlap(1024, 768), (256, 192, 512, 384));
        assert_eq!(default_overlap(5, 3), (1, 1, 2, 1));
    }
}
