//! End-to-end flow: parse matches, filter by confidence, build feature
//! banks, grow seed superpixels, partition the leftovers, match superpixels,
//! transfer statistics, smooth, and convert back to RGB.

use crate::correspondence::{self, MatchedPointSet, Side};
use crate::error::{Error, Result};
use crate::features::{self, FeatureToggles, FeatureWeights, PixelFeatureBank};
use crate::imagecore::{self, ImagePlane, LabPlane, PixelLoc};
use crate::matching::{self, CorrespondenceTable};
use crate::partition::{self, PixelGraph};
use crate::seeds::{self, SuperpixelLabelMap, SuperpixelOrigin};
use crate::transfer;
use std::collections::BTreeMap;
use std::time::Instant;

/// Uncovered-pixel count above which the partition graph is subsampled.
const STRIDE_AUTO_LIMIT: usize = 20_000;

/// Last correspondence-forming stage to run. `Match` is the full flow;
/// `Partition` pairs partition clusters by index instead of solving the
/// assignment; `Seeds` stops at the provisional seed pairing and leaves
/// uncovered pixels untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopAfter {
    Seeds,
    Partition,
    #[default]
    Match,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub weights: FeatureWeights,
    pub toggles: FeatureToggles,
    /// Fraction of matches kept, highest confidence first.
    pub match_fraction: f64,
    pub patch_side: usize,
    /// Matched points forming each coding basis.
    pub neighbors: usize,
    /// Seed clustering threshold; `None` recomputes the 60th-percentile
    /// default per image pair.
    pub t_cluster: Option<f64>,
    /// Pixel budget per partition cluster when choosing k.
    pub target_superpixel_area: usize,
    /// Partition-graph subsampling stride; 0 picks 1 or 2 automatically.
    pub stride: usize,
    /// Assignment pairs below this affinity fall back.
    pub epsilon_edge: f64,
    pub guided_radius: usize,
    pub guided_eps: f64,
    pub sigma_floor: f64,
    pub log_floor: f64,
    pub rng_seed: u64,
    pub stop_after: StopAfter,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            weights: FeatureWeights::default(),
            toggles: FeatureToggles::default(),
            match_fraction: 0.7,
            patch_side: 5,
            neighbors: 5,
            t_cluster: None,
            target_superpixel_area: 1000,
            stride: 0,
            epsilon_edge: 1e-4,
            guided_radius: 8,
            guided_eps: 1e-4,
            sigma_floor: 1e-6,
            log_floor: 1e-6,
            rng_seed: 42,
            stop_after: StopAfter::Match,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !self.toggles.any_enabled() {
            return Err(Error::InvalidConfig(
                "at least one feature toggle must be enabled".into(),
            ));
        }
        if !(self.match_fraction > 0.0 && self.match_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "match_fraction must lie in (0, 1], got {}",
                self.match_fraction
            )));
        }
        if self.patch_side % 2 == 0 || self.patch_side < 3 {
            return Err(Error::InvalidConfig(format!(
                "patch_side must be odd and at least 3, got {}",
                self.patch_side
            )));
        }
        if self.neighbors < 1 {
            return Err(Error::InvalidConfig("neighbors must be at least 1".into()));
        }
        if let Some(t) = self.t_cluster {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "t_cluster must be nonnegative, got {t}"
                )));
            }
        }
        if self.target_superpixel_area < 1 {
            return Err(Error::InvalidConfig(
                "target_superpixel_area must be at least 1".into(),
            ));
        }
        if !(self.epsilon_edge >= 0.0 && self.epsilon_edge <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon_edge must lie in [0, 1], got {}",
                self.epsilon_edge
            )));
        }
        if !(self.guided_eps >= 0.0) {
            return Err(Error::InvalidConfig("guided_eps must be nonnegative".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::InvalidConfig("sigma_floor must be positive".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StageTiming {
    pub stage: &'static str,
    pub millis: f64,
}

/// Counters and timings of one run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub timings: Vec<StageTiming>,
    pub matches_loaded: usize,
    pub matches_kept: usize,
    pub t_cluster: f64,
    pub seed_superpixels_input: usize,
    pub seed_superpixels_reference: usize,
    pub partition_clusters: usize,
    pub superpixels_input: usize,
    pub superpixels_reference: usize,
    pub matched_pairs: usize,
    pub fallback_count: usize,
}

impl RunReport {
    /// Structured text: one `stage` line per stage, one `count` line per
    /// counter.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.timings {
            out.push_str(&format!("stage {} {:.1}ms\n", t.stage, t.millis));
        }
        out.push_str(&format!("count matches_loaded {}\n", self.matches_loaded));
        out.push_str(&format!("count matches_kept {}\n", self.matches_kept));
        out.push_str(&format!("count t_cluster {:.6e}\n", self.t_cluster));
        out.push_str(&format!(
            "count seed_superpixels_input {}\n",
            self.seed_superpixels_input
        ));
        out.push_str(&format!(
            "count seed_superpixels_reference {}\n",
            self.seed_superpixels_reference
        ));
        out.push_str(&format!("count partition_clusters {}\n", self.partition_clusters));
        out.push_str(&format!("count superpixels_input {}\n", self.superpixels_input));
        out.push_str(&format!(
            "count superpixels_reference {}\n",
            self.superpixels_reference
        ));
        out.push_str(&format!("count matched_pairs {}\n", self.matched_pairs));
        out.push_str(&format!("count fallback_count {}\n", self.fallback_count));
        out
    }
}

/// Stage artifacts for debugging and ablation comparisons.
#[derive(Debug, Clone)]
pub struct Intermediates {
    pub matches: MatchedPointSet,
    pub labels_in: SuperpixelLabelMap,
    pub labels_ref: SuperpixelLabelMap,
    pub pre_filter: LabPlane,
    pub table: CorrespondenceTable,
    /// Superpixel affinities, rows input, columns reference.
    pub affinity: Vec<Vec<f64>>,
    pub lab_in: LabPlane,
    pub lab_ref: LabPlane,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub image: ImagePlane,
    pub report: RunReport,
    pub intermediates: Option<Intermediates>,
}

struct StageClock {
    timings: Vec<StageTiming>,
    started: Instant,
}

impl StageClock {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            started: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            millis: now.duration_since(self.started).as_secs_f64() * 1e3,
        });
        self.started = now;
    }
}

/// Attaches every still-uncovered pixel to the seed superpixel that contains
/// its nearest matched point's pixel.
fn attach_to_nearest_seed(
    map: &mut SuperpixelLabelMap,
    pixels: &[PixelLoc],
    matches: &MatchedPointSet,
    side: Side,
) {
    for &loc in pixels {
        if map.label(loc).is_some() {
            continue;
        }
        let m = matches.nearest_matches(side, loc, 1)[0];
        let host = map
            .label(matches.entry(m).loc(side))
            .expect("matched-point pixels are always covered");
        map.assign(loc, host);
    }
}

/// Runs the full flow on decoded images and raw match-file text.
pub fn run(
    input: &ImagePlane,
    reference: &ImagePlane,
    matches_text: &str,
    config: &PipelineConfig,
    want_intermediates: bool,
) -> Result<RunOutput> {
    config.validate()?;
    assert!(input.is_valid(), "input image out of range");
    assert!(reference.is_valid(), "reference image out of range");
    let mut clock = StageClock::new();

    // load
    let input_dims = (input.height(), input.width());
    let ref_dims = (reference.height(), reference.width());
    let loaded = correspondence::load_matches(matches_text, input_dims, ref_dims)
        .map_err(|e| e.in_stage("load"))?;
    let matches_loaded = loaded.len();
    clock.lap("load");

    // filter
    let matches = correspondence::filter_top_fraction(&loaded, config.match_fraction)
        .map_err(|e| e.in_stage("filter"))?;
    let matches_kept = matches.len();
    clock.lap("filter");

    // features
    let lab_in = imagecore::rgb_to_lab(input, config.log_floor);
    let lab_ref = imagecore::rgb_to_lab(reference, config.log_floor);
    let guide = imagecore::intensity_plane(input);
    let neighbors = config.neighbors.min(matches.len());
    let bank_in = features::build_feature_bank(
        input,
        &matches,
        Side::Input,
        &config.weights,
        config.patch_side,
        neighbors,
    );
    let bank_ref = features::build_feature_bank(
        reference,
        &matches,
        Side::Reference,
        &config.weights,
        config.patch_side,
        neighbors,
    );
    clock.lap("features");

    // seeds
    let t_cluster = config.t_cluster.unwrap_or_else(|| {
        seeds::auto_t_cluster(
            &bank_in,
            &bank_ref,
            &matches,
            &config.weights,
            &config.toggles,
            config.rng_seed,
        )
    });
    let mut labels_in = seeds::grow_seeds(
        &bank_in,
        &matches,
        &config.weights,
        &config.toggles,
        t_cluster,
        None,
    );
    let mut labels_ref = seeds::grow_seeds(
        &bank_ref,
        &matches,
        &config.weights,
        &config.toggles,
        t_cluster,
        None,
    );
    let seed_count_in = labels_in.superpixel_count();
    let seed_count_ref = labels_ref.superpixel_count();
    clock.lap("seeds");

    // partition
    let mut partition_clusters = 0usize;
    if config.stop_after != StopAfter::Seeds {
        let uncovered_in = labels_in.uncovered();
        let uncovered_ref = labels_ref.uncovered();
        let worst = uncovered_in.len().max(uncovered_ref.len());
        let stride = match config.stride {
            0 => {
                if worst > STRIDE_AUTO_LIMIT {
                    2
                } else {
                    1
                }
            }
            s => s,
        };
        let graph = partition::build_pixel_graph(
            &bank_in,
            &bank_ref,
            &labels_in,
            &labels_ref,
            &matches,
            &config.weights,
            &config.toggles,
            stride,
        );
        if let Some(graph) = graph {
            partition_clusters = run_partition(
                graph,
                &bank_in,
                &bank_ref,
                &mut labels_in,
                &mut labels_ref,
                &matches,
                config,
                uncovered_in.len().max(uncovered_ref.len()),
            )?;
        }
        // Degenerate graph or leftovers: hand remaining pixels to seeds.
        let remaining_in = labels_in.uncovered();
        attach_to_nearest_seed(&mut labels_in, &remaining_in, &matches, Side::Input);
        let remaining_ref = labels_ref.uncovered();
        attach_to_nearest_seed(&mut labels_ref, &remaining_ref, &matches, Side::Reference);
        labels_in.compact();
        labels_ref.compact();
    }
    clock.lap("partition");

    // aggregate
    let desc_in = matching::aggregate_covered(&bank_in, &labels_in, &lab_in);
    let desc_ref = matching::aggregate_covered(&bank_ref, &labels_ref, &lab_ref);
    clock.lap("aggregate");

    // match
    let affinity: Vec<Vec<f64>> = desc_in
        .iter()
        .map(|a| {
            desc_ref
                .iter()
                .map(|b| matching::superpixel_affinity(a, b, &config.weights, &config.toggles))
                .collect()
        })
        .collect();
    let table = match config.stop_after {
        StopAfter::Match => matching::hungarian_match(&affinity, config.epsilon_edge),
        StopAfter::Seeds | StopAfter::Partition => {
            provisional_table(&labels_in, &labels_ref, &affinity)
        }
    };
    let report_pairs = table.pairs().len();
    let report_fallbacks = table.fallback().len();
    clock.lap("match");

    // transfer + smoothing
    let styled = transfer::stylize(
        &lab_in,
        &lab_ref,
        &labels_in,
        &labels_ref,
        &table,
        &guide,
        config.guided_radius,
        config.guided_eps,
        config.sigma_floor,
    );
    clock.lap("transfer");

    // convert
    let image = imagecore::lab_to_rgb(&styled.smoothed);
    clock.lap("convert");

    let report = RunReport {
        timings: std::mem::take(&mut clock.timings),
        matches_loaded,
        matches_kept,
        t_cluster,
        seed_superpixels_input: seed_count_in,
        seed_superpixels_reference: seed_count_ref,
        partition_clusters,
        superpixels_input: labels_in.superpixel_count(),
        superpixels_reference: labels_ref.superpixel_count(),
        matched_pairs: report_pairs,
        fallback_count: report_fallbacks,
    };
    debug_assert_eq!(
        report.matched_pairs + report.fallback_count,
        report.superpixels_input
    );

    let intermediates = want_intermediates.then(|| Intermediates {
        matches,
        labels_in,
        labels_ref,
        pre_filter: styled.pre_filter,
        table,
        affinity,
        lab_in,
        lab_ref,
    });

    Ok(RunOutput {
        image,
        report,
        intermediates,
    })
}

/// Co-clusters the pixel graph and writes the resulting partition
/// superpixels into both label maps. Returns the cluster count used.
#[allow(clippy::too_many_arguments)]
fn run_partition(
    graph: PixelGraph,
    bank_in: &PixelFeatureBank,
    bank_ref: &PixelFeatureBank,
    labels_in: &mut SuperpixelLabelMap,
    labels_ref: &mut SuperpixelLabelMap,
    matches: &MatchedPointSet,
    config: &PipelineConfig,
    uncovered_count: usize,
) -> Result<usize> {
    // Isolated nodes go to seed superpixels before the solve.
    let isolated_x: Vec<PixelLoc> = graph
        .affinity
        .isolated_x()
        .iter()
        .map(|&i| graph.x_pixels[i])
        .collect();
    let isolated_y: Vec<PixelLoc> = graph
        .affinity
        .isolated_y()
        .iter()
        .map(|&i| graph.y_pixels[i])
        .collect();
    attach_to_nearest_seed(labels_in, &isolated_x, matches, Side::Input);
    attach_to_nearest_seed(labels_ref, &isolated_y, matches, Side::Reference);

    let keep_x: Vec<usize> = (0..graph.affinity.n_x())
        .filter(|&i| graph.affinity.deg_x()[i] > 0.0)
        .collect();
    let keep_y: Vec<usize> = (0..graph.affinity.n_y())
        .filter(|&i| graph.affinity.deg_y()[i] > 0.0)
        .collect();
    if keep_x.is_empty() || keep_y.is_empty() {
        return Ok(0);
    }
    let mut remap_x = vec![u32::MAX; graph.affinity.n_x()];
    let mut remap_y = vec![u32::MAX; graph.affinity.n_y()];
    for (new, &old) in keep_x.iter().enumerate() {
        remap_x[old] = new as u32;
    }
    for (new, &old) in keep_y.iter().enumerate() {
        remap_y[old] = new as u32;
    }
    let edges: Vec<(u32, u32, f64)> = graph
        .affinity
        .edges()
        .iter()
        .map(|&(x, y, w)| (remap_x[x as usize], remap_y[y as usize], w))
        .collect();
    let compacted = partition::BipartiteAffinity::new(keep_x.len(), keep_y.len(), edges);

    let k = partition::choose_k(uncovered_count, config.target_superpixel_area);
    let clustering = partition::co_cluster(
        &compacted,
        k,
        config.rng_seed.wrapping_add(0x9e37_79b9),
    )
    .map_err(|e| e.in_stage("partition"))?;

    // Register one superpixel per cluster per side that has members there.
    let mut sp_in = BTreeMap::new();
    let mut sp_ref = BTreeMap::new();
    for (node, &cluster) in clustering.x_labels.iter().enumerate() {
        let id = *sp_in
            .entry(cluster)
            .or_insert_with(|| labels_in.add_superpixel(SuperpixelOrigin::Partition(cluster)));
        labels_in.assign(graph.x_pixels[keep_x[node]], id);
    }
    for (node, &cluster) in clustering.y_labels.iter().enumerate() {
        let id = *sp_ref
            .entry(cluster)
            .or_insert_with(|| labels_ref.add_superpixel(SuperpixelOrigin::Partition(cluster)));
        labels_ref.assign(graph.y_pixels[keep_y[node]], id);
    }

    // Pixels skipped by the stride inherit the label of the nearest sampled
    // pixel of their own image in style-independent feature distance.
    inherit_from_sampled(labels_in, bank_in, &graph.x_pixels, config);
    inherit_from_sampled(labels_ref, bank_ref, &graph.y_pixels, config);

    Ok(clustering.k)
}

fn inherit_from_sampled(
    map: &mut SuperpixelLabelMap,
    bank: &PixelFeatureBank,
    sampled: &[PixelLoc],
    config: &PipelineConfig,
) {
    let uncovered = map.uncovered();
    for loc in uncovered {
        let f = bank.style_free(loc);
        let mut best: Option<(f64, usize)> = None;
        for &cand in sampled {
            let g = bank.style_free(cand);
            let d = partition::style_free_exponent(
                f.s,
                g.s,
                f.t,
                g.t,
                f.la,
                g.la,
                f.lr,
                g.lr,
                &config.weights,
                &config.toggles,
            );
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, map.label(cand).expect("sampled pixels are labeled")));
            }
        }
        if let Some((_, id)) = best {
            map.assign(loc, id);
        }
    }
}

/// Pairing without the assignment solve: seed superpixels pair through their
/// matched point, partition superpixels through their cluster index; inputs
/// with no counterpart fall back to their highest-affinity reference.
fn provisional_table(
    labels_in: &SuperpixelLabelMap,
    labels_ref: &SuperpixelLabelMap,
    affinity: &[Vec<f64>],
) -> CorrespondenceTable {
    let mut by_origin: BTreeMap<(u8, usize), usize> = BTreeMap::new();
    for id in 0..labels_ref.superpixel_count() {
        let key = match labels_ref.origin(id) {
            SuperpixelOrigin::Seed(m) => (0u8, m),
            SuperpixelOrigin::Partition(c) => (1u8, c),
        };
        by_origin.insert(key, id);
    }
    let mut pairs = BTreeMap::new();
    let mut fallback = BTreeMap::new();
    for id in 0..labels_in.superpixel_count() {
        let key = match labels_in.origin(id) {
            SuperpixelOrigin::Seed(m) => (0u8, m),
            SuperpixelOrigin::Partition(c) => (1u8, c),
        };
        match by_origin.get(&key) {
            Some(&ref_id) => {
                pairs.insert(id, ref_id);
            }
            None => {
                let row = &affinity[id];
                let mut best = (f64::NEG_INFINITY, 0usize);
                for (j, &a) in row.iter().enumerate() {
                    if a > best.0 {
                        best = (a, j);
                    }
                }
                fallback.insert(id, best.1);
            }
        }
    }
    CorrespondenceTable::new(pairs, fallback)
}
