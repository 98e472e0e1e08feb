//! Exact parameter and multiplication counts for conv layers.
//!
//! Counts are kernel-only: a conv with kernel `[C_out, C_in, k, k]` on an
//! `H×W` input has `C_out·C_in·k·k` parameters and `C_out·C_in·k·k·H·W`
//! multiplications. Bias terms and non-conv layers are not counted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: String,
    /// `(H, W)` of the layer's input.
    pub input_size: (usize, usize),
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_size: usize,
    pub params: u64,
    pub mults: u64,
}

impl LayerCost {
    pub fn shape_label(&self) -> String {
        let k = self.kernel_size;
        format!("{}x{}x{k}x{k}", self.out_channels, self.in_channels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<LayerCost>,
    pub total_params: u64,
    pub total_mults: u64,
}

/// One row per conv layer, input sizes from symbolic shape propagation.
pub fn cost_model(g: &ModelGraph) -> Result<CostReport> {
    let inputs = g.input_sizes()?;
    let rows: Vec<LayerCost> = g
        .layers()
        .iter()
        .zip(&inputs)
        .filter_map(|(l, &[_, h, w])| {
            l.as_conv().map(|c| {
                let params = c.kernel_params();
                LayerCost {
                    layer: l.name.clone(),
                    input_size: (h, w),
                    out_channels: c.out_channels,
                    in_channels: c.in_channels,
                    kernel_size: c.kernel_size,
                    params,
                    mults: params * (h * w) as u64,
                }
            })
        })
        .collect();
    Ok(CostReport {
        total_params: rows.iter().map(|r| r.params).sum(),
        total_mults: rows.iter().map(|r| r.mults).sum(),
        rows,
    })
}

/// A percentage held exactly as hundredths of a percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hundredths(pub i64);

impl std::fmt::Display for Hundredths {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", a / 100, a % 100)
    }
}

/// `100·(1 − pruned/baseline)` to two decimals, rounding half up.
pub fn reduction(baseline: u64, pruned: u64) -> Hundredths {
    if baseline == 0 {
        return Hundredths(0);
    }
    let b = baseline as i128;
    let diff = b - pruned as i128;
    let num = 20_000 * diff + b;
    Hundredths(num.div_euclid(2 * b) as i64)
}

/// Three-significant-figure scientific rendering, e.g. `14745600 → "1.47e7"`.
pub fn sci3(n: u64) -> String {
    if n == 0 {
        return "0.00e0".into();
    }
    let mut exp = n.ilog10();
    let mantissa = if exp >= 2 {
        let div = 10u128.pow(exp - 2);
        let m = (2 * n as u128 + div) / (2 * div);
        if m >= 1000 {
            exp += 1;
            m / 10
        } else {
            m
        }
    } else {
        n as u128 * 10u128.pow(2 - exp)
    };
    format!("{}.{:02}e{exp}", mantissa / 100, mantissa % 100)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowComparison {
    pub layer: String,
    pub input_size: (usize, usize),
    pub baseline: LayerCost,
    pub pruned: LayerCost,
    pub params_reduction: Hundredths,
    pub mults_reduction: Hundredths,
}

/// Overall figures as printed in a reference table, in display form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceOverall {
    pub baseline_params: String,
    pub pruned_params: String,
    pub params_reduction: Hundredths,
    pub baseline_mults: String,
    pub pruned_mults: String,
    pub mults_reduction: Hundredths,
}

/// Overall row printed for the NIN CIFAR-100 model pruned to 16/64/96
/// channels. Its baseline multiplication count (3.23e8) and parameter
/// reduction (56.77%) do not follow from its own per-layer rows.
pub fn nin_reference_overall() -> ReferenceOverall {
    ReferenceOverall {
        baseline_params: "9.83e5".into(),
        pruned_params: "4.25e5".into(),
        params_reduction: Hundredths(5677),
        baseline_mults: "3.23e8".into(),
        pruned_mults: "8.45e7".into(),
        mults_reduction: Hundredths(7384),
    }
}

/// Per-layer `(name, C_out, C_in, k, H)` of the NIN baseline.
pub const NIN_BASELINE_ROWS: [(&str, usize, usize, usize, usize); 9] = [
    ("conv1", 192, 3, 5, 32),
    ("cccp1", 160, 192, 1, 32),
    ("cccp2", 96, 160, 1, 32),
    ("conv2", 192, 96, 5, 16),
    ("cccp3", 192, 192, 1, 16),
    ("cccp4", 192, 192, 1, 16),
    ("conv3", 192, 192, 3, 8),
    ("cccp5", 192, 192, 1, 8),
    ("cccp6", 100, 192, 1, 8),
];

/// The same rows after pruning conv1/conv2/conv3 to 16/64/96 channels.
pub const NIN_PRUNED_ROWS: [(&str, usize, usize, usize, usize); 9] = [
    ("conv1", 16, 3, 5, 32),
    ("cccp1", 160, 16, 1, 32),
    ("cccp2", 96, 160, 1, 32),
    ("conv2", 64, 96, 5, 16),
    ("cccp3", 192, 64, 1, 16),
    ("cccp4", 192, 192, 1, 16),
    ("conv3", 96, 192, 3, 8),
    ("cccp5", 192, 96, 1, 8),
    ("cccp6", 100, 192, 1, 8),
];

fn rows_match(r: &CostReport, expected: &[(&str, usize, usize, usize, usize)]) -> bool {
    r.rows.len() == expected.len()
        && r.rows.iter().zip(expected).all(|(row, &(name, co, ci, k, h))| {
            row.layer == name
                && row.out_channels == co
                && row.in_channels == ci
                && row.kernel_size == k
                && row.input_size == (h, h)
        })
}

pub fn is_nin_baseline(r: &CostReport) -> bool {
    rows_match(r, &NIN_BASELINE_ROWS)
}

/// Whether `baseline → pruned` is the configuration [`nin_reference_overall`]
/// describes.
pub fn is_nin_reference_prune(baseline: &CostReport, pruned: &CostReport) -> bool {
    is_nin_baseline(baseline) && rows_match(pruned, &NIN_PRUNED_ROWS)
}

/// Computed overall values next to a reference, with the names of fields
/// whose renderings disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub reference: ReferenceOverall,
    pub computed: ReferenceOverall,
    pub discrepancies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostComparison {
    pub rows: Vec<RowComparison>,
    pub baseline_total_params: u64,
    pub pruned_total_params: u64,
    pub params_reduction: Hundredths,
    pub baseline_total_mults: u64,
    pub pruned_total_mults: u64,
    pub mults_reduction: Hundredths,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_check: Option<ReferenceCheck>,
}

/// Row-by-row reductions between two reports over the same layers.
pub fn compare_costs(baseline: &CostReport, pruned: &CostReport) -> Result<CostComparison> {
    if baseline.rows.len() != pruned.rows.len()
        || baseline.rows.iter().zip(&pruned.rows).any(|(a, b)| a.layer != b.layer)
    {
        let names = |r: &CostReport| r.rows.iter().map(|x| x.layer.clone()).collect::<Vec<_>>();
        return Err(Error::Domain(format!(
            "layer sets differ: {:?} vs {:?}",
            names(baseline),
            names(pruned)
        )));
    }
    let rows = baseline
        .rows
        .iter()
        .zip(&pruned.rows)
        .map(|(b, p)| RowComparison {
            layer: b.layer.clone(),
            input_size: b.input_size,
            baseline: b.clone(),
            pruned: p.clone(),
            params_reduction: reduction(b.params, p.params),
            mults_reduction: reduction(b.mults, p.mults),
        })
        .collect();
    let mut cmp = CostComparison {
        rows,
        baseline_total_params: baseline.total_params,
        pruned_total_params: pruned.total_params,
        params_reduction: reduction(baseline.total_params, pruned.total_params),
        baseline_total_mults: baseline.total_mults,
        pruned_total_mults: pruned.total_mults,
        mults_reduction: reduction(baseline.total_mults, pruned.total_mults),
        reference_check: None,
    };
    if is_nin_reference_prune(baseline, pruned) {
        cmp.reference_check = Some(cmp.check_against(nin_reference_overall()));
    }
    Ok(cmp)
}

impl CostComparison {
    pub fn computed_overall(&self) -> ReferenceOverall {
        ReferenceOverall {
            baseline_params: sci3(self.baseline_total_params),
            pruned_params: sci3(self.pruned_total_params),
            params_reduction: self.params_reduction,
            baseline_mults: sci3(self.baseline_total_mults),
            pruned_mults: sci3(self.pruned_total_mults),
            mults_reduction: self.mults_reduction,
        }
    }

    pub fn check_against(&self, reference: ReferenceOverall) -> ReferenceCheck {
        let computed = self.computed_overall();
        let mut discrepancies = Vec::new();
        let pairs = [
            ("baseline_params", &reference.baseline_params, &computed.baseline_params),
            ("pruned_params", &reference.pruned_params, &computed.pruned_params),
            ("baseline_mults", &reference.baseline_mults, &computed.baseline_mults),
            ("pruned_mults", &reference.pruned_mults, &computed.pruned_mults),
        ];
        for (name, a, b) in pairs {
            if a != b {
                discrepancies.push(name.to_string());
            }
        }
        if reference.params_reduction != computed.params_reduction {
            discrepancies.push("params_reduction".into());
        }
        if reference.mults_reduction != computed.mults_reduction {
            discrepancies.push("mults_reduction".into());
        }
        ReferenceCheck {
            reference,
            computed,
            discrepancies,
        }
    }

    /// Columns: layer, input size, then baseline/pruned/reduction for params
    /// and for multiplications. Counts are exact integers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,input_size,baseline_shape,pruned_shape,baseline_params,pruned_params,params_reduction,baseline_mults,pruned_mults,mults_reduction,note\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{}x{},{},{},{},{},{},{},{},{},",
                r.layer,
                r.input_size.0,
                r.input_size.1,
                r.baseline.shape_label(),
                r.pruned.shape_label(),
                r.baseline.params,
                r.pruned.params,
                r.params_reduction,
                r.baseline.mults,
                r.pruned.mults,
                r.mults_reduction
            )
            .unwrap();
        }
        writeln!(
            out,
            "overall,-,-,-,{},{},{},{},{},{},",
            self.baseline_total_params,
            self.pruned_total_params,
            self.params_reduction,
            self.baseline_total_mults,
            self.pruned_total_mults,
            self.mults_reduction
        )
        .unwrap();
        if let Some(check) = &self.reference_check {
            let r = &check.reference;
            let note = if check.discrepancies.is_empty() {
                "reference matches".to_string()
            } else {
                format!("reference-discrepancy: {}", check.discrepancies.join(" "))
            };
            writeln!(
                out,
                "overall_reference,-,-,-,{},{},{},{},{},{},{note}",
                r.baseline_params, r.pruned_params, r.params_reduction, r.baseline_mults, r.pruned_mults, r.mults_reduction
            )
            .unwrap();
        }
        out
    }
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,input_size,shape,params,mults\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{}x{},{},{},{}",
                r.layer,
                r.input_size.0,
                r.input_size.1,
                r.shape_label(),
                r.params,
                r.mults
            )
            .unwrap();
        }
        writeln!(out, "overall,-,-,{},{}", self.total_params, self.total_mults).unwrap();
        out
    }
}
