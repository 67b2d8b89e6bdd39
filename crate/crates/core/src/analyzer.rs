//! Parameter, FLOP and latency accounting.
//!
//! FLOP convention: one multiply-accumulate counts as 2 FLOPs; activations,
//! pooling, gating multiplies and residual additions count 1 FLOP per output
//! element; nearest-neighbour upsampling and bias additions are free.

use crate::condenser::EMBED_KERNEL;
use crate::error::{Error, Result};
use crate::graph::{infer_shapes, layer_params, LayerShapes, LayerSpec, ModelGraph};
use crate::tensor::{numel, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

pub const FLOP_CONVENTION: &str =
    "1 MAC = 2 FLOPs; activation/pool/gate/residual = 1 FLOP per output element; batch 1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub params: u64,
    pub flops: u64,
    pub macs: u64,
}

impl std::ops::Add for LayerCost {
    type Output = LayerCost;
    fn add(self, o: LayerCost) -> LayerCost {
        LayerCost {
            params: self.params + o.params,
            flops: self.flops + o.flops,
            macs: self.macs + o.macs,
        }
    }
}

fn elems(s: &Shape) -> u64 {
    (s[1] * s[2] * s[3]) as u64
}

/// Cost of a single layer at batch 1.
pub fn layer_cost(spec: &LayerSpec, sh: &LayerShapes) -> LayerCost {
    let params = layer_params(spec, sh).iter().map(|p| numel(&p.shape) as u64).sum();
    let out_hw = (sh.output[2] * sh.output[3]) as u64;
    let cin = sh.input[1] as u64;
    let macs = match *spec {
        LayerSpec::Conv { out_ch, k, .. } => (k * k) as u64 * cin * out_hw * out_ch as u64,
        LayerSpec::Depthwise { k, .. } => (k * k) as u64 * out_hw * cin,
        LayerSpec::Pointwise { out_ch } => cin * out_hw * out_ch as u64,
        LayerSpec::AttnCondenser { factor } => {
            let condensed = ((sh.input[2] / factor) * (sh.input[3] / factor)) as u64;
            (EMBED_KERNEL * EMBED_KERNEL) as u64 * condensed * cin + cin * cin * condensed
        }
        LayerSpec::Dense { out } => elems(&sh.input) * out as u64,
        LayerSpec::ResidualEnd { projection: Some(p) } => {
            let skip_c = sh.skip.map(|s| s[1]).unwrap_or(sh.input[1]) as u64;
            skip_c * out_hw * p.out_ch as u64
        }
        _ => 0,
    };
    let elementwise = match *spec {
        LayerSpec::AttnCondenser { factor } => {
            let condensed = elems(&sh.input) / (factor * factor) as u64;
            // pooling + sigmoid + two gating multiplies
            condensed + 3 * elems(&sh.output)
        }
        LayerSpec::MaxPool { .. } | LayerSpec::GlobalAvgPool | LayerSpec::Activation { .. } => elems(&sh.output),
        LayerSpec::ResidualEnd { .. } => elems(&sh.output),
        _ => 0,
    };
    LayerCost {
        params,
        flops: 2 * macs + elementwise,
        macs,
    }
}

/// Per-layer costs of a spec list at batch 1.
pub fn spec_costs(specs: &[LayerSpec], input_shape: Shape) -> Result<Vec<LayerCost>> {
    let mut input = input_shape;
    input[0] = 1;
    let shapes = infer_shapes(specs, input)?;
    Ok(specs.iter().zip(&shapes).map(|(s, sh)| layer_cost(s, sh)).collect())
}

pub fn total_cost(specs: &[LayerSpec], input_shape: Shape) -> Result<LayerCost> {
    Ok(spec_costs(specs, input_shape)?.into_iter().fold(LayerCost::default(), |a, b| a + b))
}

pub fn count_params(graph: &ModelGraph) -> u64 {
    graph
        .layers()
        .iter()
        .zip(graph.shapes())
        .map(|(s, sh)| layer_cost(s, sh).params)
        .sum()
}

/// Spatial extents may differ from the bound shape; the channel count may not,
/// since it fixes the first layer's weights.
fn graph_cost(graph: &ModelGraph, input_shape: Shape) -> Result<LayerCost> {
    let bound = graph.input_shape()[1];
    if input_shape[1] != bound {
        return Err(Error::Dimension(format!(
            "graph takes {bound} input channels, costing requested {}",
            input_shape[1]
        )));
    }
    total_cost(graph.layers(), input_shape)
}

pub fn count_flops(graph: &ModelGraph, input_shape: Shape) -> Result<u64> {
    Ok(graph_cost(graph, input_shape)?.flops)
}

pub fn count_macs(graph: &ModelGraph, input_shape: Shape) -> Result<u64> {
    Ok(graph_cost(graph, input_shape)?.macs)
}

pub const NETSCORE_ALPHA: f64 = 2.0;
pub const NETSCORE_BETA: f64 = 0.5;
pub const NETSCORE_GAMMA: f64 = 0.5;

/// Ω = 20·log10(a^α / (p^β · m^γ)), with a = 100·auc, p and m in millions.
pub fn netscore(auc: f64, params: u64, macs: u64) -> Result<f64> {
    if params == 0 || macs == 0 {
        return Err(Error::Domain("NetScore needs positive parameter and MAC counts".into()));
    }
    if !(auc > 0.0 && auc <= 1.0) {
        return Err(Error::Domain(format!("NetScore needs AUC in (0, 1], got {auc}")));
    }
    let a = 100.0 * auc;
    let p = params as f64 / 1e6;
    let m = macs as f64 / 1e6;
    // Evaluated in log space for accuracy at large counts.
    Ok(20.0 * (NETSCORE_ALPHA * a.log10() - NETSCORE_BETA * p.log10() - NETSCORE_GAMMA * m.log10()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub std: f64,
    pub n_runs: usize,
}

impl LatencyStats {
    /// Summary of per-run times in milliseconds.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("latency needs at least one run".into()));
        }
        let n = samples.len();
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        let std = if n > 1 {
            (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(LatencyStats {
            mean,
            median,
            p95: sorted[rank - 1],
            std,
            n_runs: n,
        })
    }
}

/// Wall-clock single-image forward latency on the calling thread.
pub fn benchmark_latency(graph: &ModelGraph, n_runs: usize, warmup: usize) -> Result<LatencyStats> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be >= 1".into()));
    }
    let mut shape = graph.input_shape();
    shape[0] = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe7c);
    let input = Tensor::from_vec(shape, (0..numel(&shape)).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    for _ in 0..warmup {
        std::hint::black_box(graph.forward(&input)?);
    }
    let mut samples = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let t0 = Instant::now();
        std::hint::black_box(graph.forward(&input)?);
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    LatencyStats::from_samples(&samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub model: String,
    pub params: u64,
    pub flops: u64,
    pub macs: u64,
    pub auc: Option<f64>,
    pub netscore: Option<f64>,
    pub latency_ms: Option<LatencyStats>,
    pub input_shape: Shape,
    pub flop_convention: String,
}

impl ComplexityReport {
    pub fn from_specs(model: &str, specs: &[LayerSpec], input_shape: Shape) -> Result<Self> {
        let cost = total_cost(specs, input_shape)?;
        let mut shape = input_shape;
        shape[0] = 1;
        Ok(ComplexityReport {
            model: model.to_string(),
            params: cost.params,
            flops: cost.flops,
            macs: cost.macs,
            auc: None,
            netscore: None,
            latency_ms: None,
            input_shape: shape,
            flop_convention: FLOP_CONVENTION.to_string(),
        })
    }

    pub fn for_graph(model: &str, graph: &ModelGraph) -> Result<Self> {
        Self::from_specs(model, graph.layers(), graph.input_shape())
    }

    pub fn with_auc(mut self, auc: f64) -> Result<Self> {
        self.netscore = Some(netscore(auc, self.params, self.macs)?);
        self.auc = Some(auc);
        Ok(self)
    }
}

/// Compact magnitude: 65K, 596M, 37B.
pub fn humanize(v: u64) -> String {
    let f = v as f64;
    if f >= 1e9 {
        format!("{:.2}B", f / 1e9)
    } else if f >= 1e6 {
        format!("{:.2}M", f / 1e6)
    } else if f >= 1e3 {
        format!("{:.1}K", f / 1e3)
    } else {
        v.to_string()
    }
}

/// Aligned plain-text table: Model, NetScore, Params, FLOPS, Latency (ms), Test AUC.
pub fn render_table(rows: &[ComplexityReport]) -> String {
    let header = ["Model", "NetScore", "Params", "FLOPS", "Latency (ms)", "Test AUC"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                r.netscore.map_or("n/a".into(), |v| format!("{v:.2}")),
                humanize(r.params),
                humanize(r.flops),
                r.latency_ms.map_or("n/a".into(), |l| format!("{:.1}", l.median)),
                r.auc.map_or("n/a".into(), |v| format!("{v:.4}")),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        let mut first = true;
        for (c, w) in row.iter().zip(widths) {
            if !first {
                out.push_str("  ");
            }
            if first {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "{c:>w$}");
            }
            first = false;
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &cells {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, resnet50_descriptor, seed_prototype, PrototypeConfig};
    use crate::nn::Activation;

    #[test]
    fn conv_params_closed_form() {
        let specs = [LayerSpec::Conv { out_ch: 16, k: 3, stride: 1, pad: 1 }];
        let c = spec_costs(&specs, [1, 3, 8, 8]).unwrap();
        assert_eq!(c[0].params, 3 * 3 * 3 * 16 + 16);
        assert_eq!(c[0].params, 448);
    }

    #[test]
    fn condenser_params_closed_form() {
        let c = spec_costs(&[LayerSpec::AttnCondenser { factor: 2 }], [1, 16, 8, 8]).unwrap();
        assert_eq!(c[0].params, 144 + 256 + 32);
    }

    #[test]
    fn conv_and_dense_flops_closed_form() {
        let c = spec_costs(&[LayerSpec::Conv { out_ch: 8, k: 3, stride: 1, pad: 1 }], [1, 1, 8, 8]).unwrap();
        assert_eq!(c[0].flops, 2 * 9 * 64 * 8);
        assert_eq!(c[0].flops, 9216);
        let d = spec_costs(&[LayerSpec::Dense { out: 2 }], [1, 64, 1, 1]).unwrap();
        assert_eq!(d[0].flops, 256);
        assert_eq!(d[0].macs * 2, d[0].flops);
    }

    #[test]
    fn params_equal_arena_length() {
        let specs = seed_prototype(&PrototypeConfig::default()).unwrap();
        let g = build_graph(&specs, [1, 1, 128, 128], 0).unwrap();
        assert_eq!(count_params(&g), g.weights().len() as u64);
    }

    /// Summation oracle over a hand-built layer table for the default prototype.
    #[test]
    fn prototype_flops_match_hand_table() {
        let specs = seed_prototype(&PrototypeConfig::default()).unwrap();
        let total = total_cost(&specs, [1, 1, 128, 128]).unwrap();

        let elems = |c: u64, s: u64| c * s * s;
        let conv = |cin: u64, cout: u64, k: u64, s: u64| 2 * k * k * cin * cout * s * s;
        let condenser = |c: u64, s: u64| {
            let q = s / 2;
            elems(c, q) + conv(1, 1, 3, q) * c + 2 * c * c * q * q + 3 * elems(c, s)
        };
        let block = |cin: u64, cout: u64, s: u64, residual: bool| {
            condenser(cin, s)
                + conv(1, 1, 3, s) * cin
                + conv(cin, cout, 1, s)
                + elems(cout, s)
                + if residual { elems(cout, s) } else { 0 }
        };
        let mut expected = conv(1, 16, 3, 64) + elems(16, 64);
        expected += 2 * block(16, 16, 64, true) + elems(16, 32);
        expected += block(16, 24, 32, false) + block(24, 24, 32, true) + elems(24, 16);
        expected += block(24, 32, 16, false) + block(32, 32, 16, true);
        expected += 32 + 2 * 32 * 2;
        assert_eq!(total.flops, expected);
        assert!(total.flops < 1_000_000_000);
        assert!(total.params < 1_000_000);
    }

    #[test]
    fn flops_are_additive_over_concatenation() {
        let a = vec![
            LayerSpec::Conv { out_ch: 4, k: 3, stride: 1, pad: 1 },
            LayerSpec::Activation { kind: Activation::Relu },
        ];
        let b = vec![LayerSpec::AttnCondenser { factor: 2 }, LayerSpec::GlobalAvgPool, LayerSpec::Dense { out: 2 }];
        let ca = total_cost(&a, [1, 1, 8, 8]).unwrap();
        let cb = total_cost(&b, [1, 4, 8, 8]).unwrap();
        let joined: Vec<_> = a.into_iter().chain(b).collect();
        let cj = total_cost(&joined, [1, 1, 8, 8]).unwrap();
        assert_eq!(cj, ca + cb);
    }

    #[test]
    fn resnet50_counts() {
        let two = total_cost(&resnet50_descriptor(2), [1, 3, 224, 224]).unwrap();
        assert!((two.params as f64 - 23e6).abs() <= 0.05 * 23e6, "{}", two.params);
        // Layer-by-layer count: conv weights+biases, projections, 2-way head.
        assert_eq!(two.params, 23_485_570);
        let thousand = total_cost(&resnet50_descriptor(1000), [1, 3, 224, 224]).unwrap();
        // Published 25,557,032 counts batch-norm scale and shift (53,120 values)
        // and no conv biases (26,560 values): 25,557,032 - 53,120 + 26,560.
        assert_eq!(thousand.params, 25_530_472);
        assert!((thousand.params as f64 - 25.56e6).abs() / 25.56e6 < 0.005);
    }

    #[test]
    fn netscore_examples() {
        assert_eq!(netscore(1.0, 1_000_000, 1_000_000).unwrap(), 80.0);
        let v = netscore(0.90, 65_000, 298_000_000).unwrap();
        // 20·log10(90² / sqrt(0.065 · 298))
        let oracle = 20.0 * (8100.0 / (0.065f64 * 298.0).sqrt()).log10();
        assert!((v - oracle).abs() < 1e-9);
        assert!((v - 65.30).abs() < 0.01, "{v}");
        let a = netscore(0.9, 100_000, 5_000_000).unwrap();
        let b = netscore(0.9, 200_000, 5_000_000).unwrap();
        assert!((a - b - 20.0 * 2f64.sqrt().log10()).abs() < 1e-9);
        assert!((a - b - 3.0103).abs() < 1e-4);
        assert!(matches!(netscore(0.9, 0, 10), Err(Error::Domain(_))));
        assert!(matches!(netscore(0.9, 10, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn latency_stats_single_run() {
        let s = LatencyStats::from_samples(&[3.5]).unwrap();
        assert_eq!(s.median, 3.5);
        assert_eq!(s.p95, 3.5);
        assert_eq!(s.std, 0.0);
        let s = LatencyStats::from_samples(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.p95, 4.0);
    }

    #[test]
    fn benchmark_rejects_zero_runs_and_reports_one() {
        let g = build_graph(&[LayerSpec::Dense { out: 2 }], [1, 1, 4, 4], 0).unwrap();
        assert!(matches!(benchmark_latency(&g, 0, 0), Err(Error::Config(_))));
        let s = benchmark_latency(&g, 1, 0).unwrap();
        assert_eq!(s.n_runs, 1);
        assert_eq!(s.median, s.mean);
    }

    #[test]
    fn table_has_expected_columns() {
        let r = ComplexityReport::from_specs("proto", &seed_prototype(&PrototypeConfig::default()).unwrap(), [1, 1, 128, 128])
            .unwrap()
            .with_auc(0.95)
            .unwrap();
        let t = render_table(&[r]);
        let head = t.lines().next().unwrap();
        for col in ["Model", "NetScore", "Params", "FLOPS", "Latency (ms)", "Test AUC"] {
            assert!(head.contains(col));
        }
    }
}
