use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::special::f_tail;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub factor1: String,
    pub factor2: String,
    pub value: f64,
}

impl Observation {
    pub fn new(factor1: impl Into<String>, factor2: impl Into<String>, value: f64) -> Self {
        Self {
            factor1: factor1.into(),
            factor2: factor2.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub name: String,
    pub sum_sq: f64,
    pub df: usize,
    #[serde(rename = "F")]
    pub f: f64,
    pub p: f64,
    /// Partial eta squared.
    pub eta_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub sum_sq: f64,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub factors: [String; 2],
    pub levels: [Vec<String>; 2],
    pub replicates: usize,
    pub effects: Vec<Effect>,
    pub residual: Residual,
    pub total_sum_sq: f64,
}

impl AnovaResult {
    pub fn effect(&self, name: &str) -> Option<&Effect> {
        self.effects.iter().find(|e| e.name == name)
    }

    /// Plain-text table with columns Source, Sum Sq, Df, F, p-value.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>14} {:>6} {:>12} {:>12}", "Source", "Sum Sq", "Df", "F", "p-value");
        for e in &self.effects {
            let _ = writeln!(
                out,
                "{:<28} {:>14.6} {:>6} {:>12.4} {:>12}",
                e.name,
                e.sum_sq,
                e.df,
                e.f,
                format_p(e.p)
            );
        }
        let _ = writeln!(out, "{:<28} {:>14.6} {:>6}", "Residual", self.residual.sum_sq, self.residual.df);
        out
    }

    /// CSV rows `source,sum_sq,df,F,p_value,partial_eta_sq`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,sum_sq,df,F,p_value,partial_eta_sq\n");
        for e in &self.effects {
            let _ = writeln!(out, "{},{},{},{},{},{}", e.name, e.sum_sq, e.df, e.f, e.p, e.eta_sq);
        }
        let _ = writeln!(out, "Residual,{},{},NA,NA,NA", self.residual.sum_sq, self.residual.df);
        out
    }
}

fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.4}")
    }
}

fn f_and_p(ss: f64, df: usize, sse: f64, dfe: usize) -> (f64, f64) {
    let ms = ss / df as f64;
    let mse = sse / dfe as f64;
    if mse == 0.0 {
        return if ms == 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) };
    }
    let f = ms / mse;
    (f, f_tail(f, df as f64, dfe as f64))
}

fn partial_eta(ss: f64, sse: f64) -> f64 {
    if ss + sse == 0.0 {
        0.0
    } else {
        ss / (ss + sse)
    }
}

/// Two-way ANOVA with interaction for a balanced design. Levels are sorted by
/// name; effect names are the factor names and `factor1:factor2`.
pub fn two_way_anova(observations: &[Observation], factor_names: [&str; 2]) -> Result<AnovaResult> {
    let mut cells: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    let mut l1: Vec<&str> = Vec::new();
    let mut l2: Vec<&str> = Vec::new();
    for o in observations {
        if !o.value.is_finite() {
            return Err(Error::Argument(format!(
                "non-finite observation in cell ({}, {})",
                o.factor1, o.factor2
            )));
        }
        cells.entry((&o.factor1, &o.factor2)).or_default().push(o.value);
        l1.push(&o.factor1);
        l2.push(&o.factor2);
    }
    l1.sort_unstable();
    l1.dedup();
    l2.sort_unstable();
    l2.dedup();
    if l1.len() < 2 || l2.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 levels per factor, got {} and {}",
            l1.len(),
            l2.len()
        )));
    }
    let n = cells.values().map(Vec::len).max().unwrap_or(0);
    let mut short = Vec::new();
    for a in &l1 {
        for b in &l2 {
            let have = cells.get(&(*a, *b)).map_or(0, Vec::len);
            if have != n {
                short.push(format!("({a}, {b}) has {have} of {n}"));
            }
        }
    }
    if !short.is_empty() {
        return Err(Error::UnbalancedDesign(short.join("; ")));
    }
    if n < 2 {
        return Err(Error::UnbalancedDesign(
            "each cell needs at least 2 replicates for a residual term".into(),
        ));
    }

    let (a, b) = (l1.len(), l2.len());
    let nf = n as f64;
    let mut cell_mean = vec![vec![0.0; b]; a];
    for (i, x) in l1.iter().enumerate() {
        for (j, y) in l2.iter().enumerate() {
            let v = &cells[&(*x, *y)];
            cell_mean[i][j] = v.iter().sum::<f64>() / nf;
        }
    }
    let grand = cell_mean.iter().flatten().sum::<f64>() / (a * b) as f64;
    let mean_a: Vec<f64> = cell_mean.iter().map(|r| r.iter().sum::<f64>() / b as f64).collect();
    let mean_b: Vec<f64> = (0..b)
        .map(|j| cell_mean.iter().map(|r| r[j]).sum::<f64>() / a as f64)
        .collect();

    let ss_a = b as f64 * nf * mean_a.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = a as f64 * nf * mean_b.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    let mut ss_e = 0.0;
    let mut ss_t = 0.0;
    for (i, x) in l1.iter().enumerate() {
        for (j, y) in l2.iter().enumerate() {
            ss_ab += nf * (cell_mean[i][j] - mean_a[i] - mean_b[j] + grand).powi(2);
            for v in &cells[&(*x, *y)] {
                ss_e += (v - cell_mean[i][j]).powi(2);
                ss_t += (v - grand).powi(2);
            }
        }
    }
    let df_a = a - 1;
    let df_b = b - 1;
    let df_ab = df_a * df_b;
    let df_e = a * b * (n - 1);

    let effect = |name: String, ss: f64, df: usize| {
        let (f, p) = f_and_p(ss, df, ss_e, df_e);
        Effect {
            name,
            sum_sq: ss,
            df,
            f,
            p,
            eta_sq: partial_eta(ss, ss_e),
        }
    };
    let [f1, f2] = factor_names;
    Ok(AnovaResult {
        factors: [f1.to_owned(), f2.to_owned()],
        levels: [
            l1.iter().map(|s| s.to_string()).collect(),
            l2.iter().map(|s| s.to_string()).collect(),
        ],
        replicates: n,
        effects: vec![
            effect(f1.to_owned(), ss_a, df_a),
            effect(f2.to_owned(), ss_b, df_b),
            effect(format!("{f1}:{f2}"), ss_ab, df_ab),
        ],
        residual: Residual { sum_sq: ss_e, df: df_e },
        total_sum_sq: ss_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> Vec<Observation> {
        let mut v = Vec::new();
        for (a, b, xs) in [
            ("a1", "b1", [1.0, 2.0, 3.0]),
            ("a1", "b2", [4.0, 5.0, 6.0]),
            ("a2", "b1", [2.0, 3.0, 4.0]),
            ("a2", "b2", [8.0, 9.0, 10.0]),
        ] {
            for x in xs {
                v.push(Observation::new(a, b, x));
            }
        }
        v
    }

    #[test]
    fn hand_computed_two_by_two() {
        let r = two_way_anova(&fixture(), ["A", "B"]).unwrap();
        let e = |n: &str| r.effect(n).unwrap().clone();
        assert!((e("A").sum_sq - 18.75).abs() < 1e-9);
        assert!((e("B").sum_sq - 60.75).abs() < 1e-9);
        assert!((e("A:B").sum_sq - 6.75).abs() < 1e-9);
        assert!((r.residual.sum_sq - 8.0).abs() < 1e-9);
        assert_eq!(r.residual.df, 8);
        assert!((e("A").f - 18.75).abs() < 1e-9);
        assert!((e("B").f - 60.75).abs() < 1e-9);
        assert!((e("A:B").f - 6.75).abs() < 1e-9);
        assert!((e("A").eta_sq - 18.75 / 26.75).abs() < 1e-12);
        let table = r.to_table();
        assert!(table.starts_with("Source"));
        assert!(table.contains("Residual"));
    }

    #[test]
    fn equal_means_give_zero_f() {
        let mut v = Vec::new();
        for a in ["x", "y"] {
            for b in ["p", "q", "r"] {
                for x in [1.0, 2.0, 3.0] {
                    v.push(Observation::new(a, b, x));
                }
            }
        }
        let r = two_way_anova(&v, ["f", "g"]).unwrap();
        for e in &r.effects {
            assert!(e.f.abs() < 1e-12);
            assert!((e.p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unbalanced_names_short_cells() {
        let mut v = fixture();
        v.pop();
        match two_way_anova(&v, ["A", "B"]) {
            Err(Error::UnbalancedDesign(msg)) => assert!(msg.contains("(a2, b2) has 2 of 3")),
            other => panic!("{other:?}"),
        }
        let single: Vec<_> = fixture().into_iter().filter(|o| o.factor1 == "a1").collect();
        assert!(matches!(two_way_anova(&single, ["A", "B"]), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn sums_of_squares_partition(
            a in 2usize..4, b in 2usize..4, n in 2usize..4,
            vals in prop::collection::vec(-50.0f64..50.0, 36),
        ) {
            let mut obs = Vec::new();
            let mut k = 0;
            for i in 0..a {
                for j in 0..b {
                    for _ in 0..n {
                        obs.push(Observation::new(format!("a{i}"), format!("b{j}"), vals[k]));
                        k += 1;
                    }
                }
            }
            let r = two_way_anova(&obs, ["A", "B"]).unwrap();
            let parts: f64 = r.effects.iter().map(|e| e.sum_sq).sum::<f64>() + r.residual.sum_sq;
            prop_assert!((parts - r.total_sum_sq).abs() <= 1e-9 * r.total_sum_sq.max(1.0));
            prop_assert_eq!(r.effects[0].df, a - 1);
            prop_assert_eq!(r.effects[1].df, b - 1);
            prop_assert_eq!(r.residual.df, a * b * (n - 1));
        }
    }
}
