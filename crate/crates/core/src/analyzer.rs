//! Static parameter and FLOP counts.
//!
//! Counting convention (batch size 1):
//!
//! | layer           | parameters                      | FLOPs                                   |
//! |-----------------|---------------------------------|-----------------------------------------|
//! | convolution     | `kh·kw·kd·(in/g)·out` (+ `out`) | `out_elems·kh·kw·kd·(in/g)` (+ `out_elems` with bias) |
//! | batch norm      | `2·channels` (scale, shift)     | `2·elems`                               |
//! | fully connected | `in·out + out`                  | `in·out + out`                          |
//! | ReLU, concat, pooling | 0                         | 0                                       |
//!
//! A multiply-accumulate counts as one FLOP. With the calibrated bias layout
//! this reproduces the published totals for 25×25 inputs to the last
//! reported digit: 51.616k / 369.331M (200 bands, 16 classes), 30.453k /
//! 187.531M (103 bands, 9 classes) and 30.021k / 183.743M (102 bands).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::{LayerKind, LayerSpec, NetworkGraph};
use crate::ops::{BatchNormSpec, Conv3dSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub output_shape: Vec<usize>,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    /// `(h, w, bands)` of the analysed input.
    pub input_shape: [usize; 3],
    pub per_layer: Vec<LayerCost>,
    pub total_params: u64,
    pub total_flops: u64,
}

/// Parameter-bearing layer description for the counting functions.
#[derive(Debug, Clone, Copy)]
pub enum CostSpec<'a> {
    Conv(&'a Conv3dSpec),
    BatchNorm(&'a BatchNormSpec),
    FullyConnected { inputs: usize, outputs: usize },
}

pub fn count_params(spec: CostSpec<'_>) -> u64 {
    match spec {
        CostSpec::Conv(s) => {
            s.weight_count() as u64 + if s.has_bias { s.out_channels as u64 } else { 0 }
        }
        CostSpec::BatchNorm(s) => 2 * s.channels as u64,
        CostSpec::FullyConnected { inputs, outputs } => (inputs * outputs + outputs) as u64,
    }
}

/// FLOPs for one sample with input volume `(c, h, w, d)`.
pub fn count_flops(spec: CostSpec<'_>, input: [usize; 4]) -> Result<u64> {
    let [c, h, w, d] = input;
    if input.contains(&0) {
        return Err(Error::Shape(format!("input extents must be positive, got {input:?}")));
    }
    match spec {
        CostSpec::Conv(s) => {
            s.validate()?;
            if c != s.in_channels {
                return Err(Error::Shape(format!(
                    "input has {c} channels, convolution expects {}",
                    s.in_channels
                )));
            }
            let [oh, ow, od] = s.output_extents(h, w, d)?;
            let out_elems = (oh * ow * od * s.out_channels) as u64;
            let macs = out_elems * (s.in_per_group() * s.kernel_volume()) as u64;
            Ok(macs + if s.has_bias { out_elems } else { 0 })
        }
        CostSpec::BatchNorm(s) => {
            if c != s.channels {
                return Err(Error::Shape(format!("batch norm over {} channels got {c}", s.channels)));
            }
            Ok(2 * (c * h * w * d) as u64)
        }
        CostSpec::FullyConnected { inputs, outputs } => Ok((inputs * outputs + outputs) as u64),
    }
}

fn layer_cost(l: &LayerSpec, in_shape: Option<&Vec<usize>>) -> Result<(u64, u64)> {
    let vol = |s: &Vec<usize>| -> [usize; 4] {
        match s[..] {
            [_, c, h, w, d] => [c, h, w, d],
            [_, c] => [c, 1, 1, 1],
            _ => [0; 4],
        }
    };
    let spec = match &l.kind {
        LayerKind::Conv(s) => CostSpec::Conv(s),
        LayerKind::BatchNorm(s) => CostSpec::BatchNorm(s),
        LayerKind::FullyConnected { inputs, outputs } => CostSpec::FullyConnected {
            inputs: *inputs,
            outputs: *outputs,
        },
        _ => return Ok((0, 0)),
    };
    let input = vol(in_shape.expect("parameterised layers have an input"));
    Ok((count_params(spec), count_flops(spec, input)?))
}

/// Per-layer and total costs for a single `(h, w, bands)` sample.
pub fn analyze_network(graph: &NetworkGraph, input: [usize; 3]) -> Result<CostReport> {
    let [h, w, b] = input;
    if b != graph.config.bands {
        return Err(Error::Shape(format!(
            "input has {b} bands, network was built for {}",
            graph.config.bands
        )));
    }
    let shapes = graph.shape_ledger([1, 1, h, w, b])?;
    let mut per_layer = Vec::with_capacity(graph.layers.len());
    for (i, l) in graph.layers.iter().enumerate() {
        let (params, flops) =
            layer_cost(l, l.inputs.first().map(|&j| &shapes[j])).map_err(|e| e.in_layer(&l.name))?;
        per_layer.push(LayerCost {
            name: l.name.clone(),
            kind: l.kind_name(),
            output_shape: shapes[i].clone(),
            params,
            flops,
        });
    }
    Ok(CostReport {
        input_shape: input,
        total_params: per_layer.iter().map(|c| c.params).sum(),
        total_flops: per_layer.iter().map(|c| c.flops).sum(),
        per_layer,
    })
}

/// `51616 → "51.616k"`, `369330976 → "369.331M"`.
pub fn format_si(v: u64) -> String {
    let v = v as f64;
    if v >= 1e9 {
        format!("{:.3}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.3}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.3}k", v / 1e3)
    } else {
        format!("{v}")
    }
}

impl CostReport {
    pub fn to_text(&self) -> String {
        let [h, w, b] = self.input_shape;
        let name_w = self.per_layer.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        writeln!(s, "input {h}×{w}×{b}").unwrap();
        writeln!(
            s,
            "{:<name_w$}  {:<14}  {:<18}  {:>10}  {:>14}",
            "layer", "kind", "output", "params", "flops"
        )
        .unwrap();
        for c in &self.per_layer {
            writeln!(
                s,
                "{:<name_w$}  {:<14}  {:<18}  {:>10}  {:>14}",
                c.name,
                c.kind,
                crate::network::table_notation(&c.output_shape),
                c.params,
                c.flops
            )
            .unwrap();
        }
        writeln!(
            s,
            "{:<name_w$}  {:<14}  {:<18}  {:>10}  {:>14}",
            "total", "", "", self.total_params, self.total_flops
        )
        .unwrap();
        writeln!(
            s,
            "params {}  flops {}",
            format_si(self.total_params),
            format_si(self.total_flops)
        )
        .unwrap();
        s
    }

    /// `layerName,params,flops`, one row per layer then a `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layerName,params,flops\n");
        for c in &self.per_layer {
            writeln!(s, "{},{},{}", c.name, c.params, c.flops).unwrap();
        }
        writeln!(s, "total,{},{}", self.total_params, self.total_flops).unwrap();
        s
    }
}

/// Cost of a `groups`-way grouped convolution producing `out_positions`
/// output voxels, as `(params, flops)` (bias-free).
pub fn grouped_conv_cost(kernel: [usize; 3], c_in: usize, c_out: usize, groups: usize, out_positions: usize) -> (u64, u64) {
    let k: usize = kernel.iter().product();
    let params = (k * (c_in / groups) * (c_out / groups) * groups) as u64;
    (params, params * out_positions as u64)
}

/// Cost of a depthwise convolution followed by a pointwise one, as
/// `(params, flops)` (bias-free).
pub fn separable_conv_cost(kernel: [usize; 3], c_in: usize, c_out: usize, out_positions: usize) -> (u64, u64) {
    let k: usize = kernel.iter().product();
    let params = (k * c_in + c_in * c_out) as u64;
    (params, params * out_positions as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, NetworkConfig};

    #[test]
    fn formula_examples() {
        let dw = Conv3dSpec::depthwise(48, [3, 3, 3], [1, 1, 1]);
        assert_eq!(count_params(CostSpec::Conv(&dw)), 1296);
        let fdw = Conv3dSpec::depthwise(48, [3, 3, 97], [1, 1, 0]);
        assert_eq!(count_params(CostSpec::Conv(&fdw)), 41_904);
        let pw = Conv3dSpec::pointwise(48, 12);
        assert_eq!(count_params(CostSpec::Conv(&pw)), 576);
        assert_eq!(
            count_flops(CostSpec::Conv(&pw), [48, 9, 9, 97]).unwrap(),
            9 * 9 * 97 * 48 * 12
        );
        assert_eq!(count_params(CostSpec::BatchNorm(&BatchNormSpec::new(12))), 24);
        assert_eq!(count_params(CostSpec::FullyConnected { inputs: 60, outputs: 16 }), 976);
    }

    #[test]
    fn rejects_impossible_inputs() {
        let pw = Conv3dSpec::pointwise(48, 12);
        assert!(count_flops(CostSpec::Conv(&pw), [0, 9, 9, 97]).is_err());
        assert!(count_flops(CostSpec::Conv(&pw), [47, 9, 9, 97]).is_err());
        let k = Conv3dSpec::new(1, 1, [1, 1, 7]);
        assert!(count_flops(CostSpec::Conv(&k), [1, 1, 1, 3]).is_err());
    }

    #[test]
    fn si_formatting() {
        assert_eq!(format_si(51_616), "51.616k");
        assert_eq!(format_si(369_330_976), "369.331M");
        assert_eq!(format_si(6_030_000_000), "6.030G");
        assert_eq!(format_si(12), "12");
    }

    #[test]
    fn totals_are_sums() {
        let g = build_network(&NetworkConfig::new(9, 200, 16)).unwrap();
        let r = analyze_network(&g, [9, 9, 200]).unwrap();
        assert_eq!(r.total_params, r.per_layer.iter().map(|c| c.params).sum::<u64>());
        assert_eq!(r.total_flops, r.per_layer.iter().map(|c| c.flops).sum::<u64>());
        let csv = r.to_csv();
        assert!(csv.starts_with("layerName,params,flops\n"));
        assert_eq!(csv.lines().count(), r.per_layer.len() + 2);
        assert!(r.to_text().contains("51.616k"));
    }

    #[test]
    fn groups_one_reduces_to_standard() {
        let (p, f) = grouped_conv_cost([3, 3, 3], 12, 24, 1, 100);
        let std = Conv3dSpec::new(12, 24, [3, 3, 3]).with_padding([1, 1, 1]);
        assert_eq!(p, count_params(CostSpec::Conv(&std)));
        assert_eq!(f, count_flops(CostSpec::Conv(&std), [12, 10, 10, 1]).unwrap() * 1);
    }

    #[test]
    fn pointwise_kernel_makes_separable_costlier() {
        let (gp, gf) = grouped_conv_cost([1, 1, 1], 48, 48, 3, 81);
        let (sp, sf) = separable_conv_cost([1, 1, 1], 48, 48, 81);
        assert!(sp > gp && sf > gf);
        let (gp, gf) = grouped_conv_cost([3, 3, 3], 48, 48, 3, 81);
        let (sp, sf) = separable_conv_cost([3, 3, 3], 48, 48, 81);
        assert!(sp < gp && sf < gf);
    }
}
