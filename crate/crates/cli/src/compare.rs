//! Grouping eval tables by (bitrate, model) for side-by-side reading.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

/// Per-clip SNRs of one eval run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub model: String,
    pub bitrate: String,
    pub snrs: Vec<f64>,
}

impl EvalTable {
    pub fn mean(&self) -> f64 {
        self.snrs.iter().sum::<f64>() / self.snrs.len() as f64
    }

    /// Population standard deviation across clips.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.snrs.iter().map(|s| (s - m).powi(2)).sum::<f64>() / self.snrs.len() as f64).sqrt()
    }
}

/// Header lines written ahead of an eval TSV.
pub fn eval_preamble(model: &str, bitrate: &str) -> String {
    format!("# model\t{model}\n# bitrate\t{bitrate}\n")
}

/// Parse the output of `harpnet eval`.
pub fn parse_eval(text: &str) -> Result<EvalTable> {
    let (mut model, mut bitrate) = (None, None);
    let mut snrs = Vec::new();
    let mut header_seen = false;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let Some(meta) = line.strip_prefix('#') {
            let mut it = meta.trim().splitn(2, '\t');
            match (it.next(), it.next()) {
                (Some("model"), Some(v)) => model = Some(v.trim().to_string()),
                (Some("bitrate"), Some(v)) => bitrate = Some(v.trim().to_string()),
                _ => {}
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if !header_seen {
            if cols.get(1) != Some(&"snr_db") {
                bail!("expected an eval table header, found {line:?}");
            }
            header_seen = true;
            continue;
        }
        if cols[0] == "mean" {
            continue;
        }
        let snr = cols.get(1).with_context(|| format!("short row {line:?}"))?;
        snrs.push(snr.parse().with_context(|| format!("bad snr in row {line:?}"))?);
    }
    if snrs.is_empty() {
        bail!("eval table has no clip rows");
    }
    Ok(EvalTable {
        model: model.context("missing `# model` line")?,
        bitrate: bitrate.context("missing `# bitrate` line")?,
        snrs,
    })
}

/// Numeric labels sort numerically, anything else after them lexically.
fn bitrate_key(label: &str) -> (u8, f64, String) {
    match label.parse::<f64>() {
        Ok(v) => (0, v, String::new()),
        Err(_) => (1, 0.0, label.to_string()),
    }
}

pub struct Comparison {
    pub rows: Vec<EvalTable>,
    /// Bitrate groups missing at least one of the models.
    pub incomplete: Vec<String>,
}

pub fn compare(mut tables: Vec<EvalTable>) -> Result<Comparison> {
    if tables.len() < 2 {
        bail!("compare needs at least two eval outputs");
    }
    tables.sort_by(|a, b| {
        bitrate_key(&a.bitrate)
            .partial_cmp(&bitrate_key(&b.bitrate))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.model.cmp(&b.model))
    });
    let models: BTreeSet<&str> = tables.iter().map(|t| t.model.as_str()).collect();
    let mut groups: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for t in &tables {
        groups.entry(&t.bitrate).or_default().insert(&t.model);
    }
    let incomplete = groups.iter().filter(|(_, m)| m.len() != models.len()).map(|(b, _)| b.to_string()).collect();
    Ok(Comparison { rows: tables, incomplete })
}

impl Comparison {
    fn models(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rows.iter().map(|t| t.model.as_str()).collect();
        set.into_iter().collect()
    }

    fn bitrates(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.rows {
            if !out.contains(&t.bitrate.as_str()) {
                out.push(&t.bitrate);
            }
        }
        out
    }

    /// One row per bitrate, one column per model, cells `mean ± std` dB.
    pub fn text_table(&self) -> String {
        let models = self.models();
        let mut s = format!("{:<10}", "bitrate");
        for m in &models {
            let _ = write!(s, " {m:>18}");
        }
        s.push('\n');
        for b in self.bitrates() {
            let _ = write!(s, "{b:<10}");
            for m in &models {
                match self.rows.iter().find(|t| t.bitrate == b && t.model == *m) {
                    Some(t) => {
                        let _ = write!(s, " {:>18}", format!("{:.2} ± {:.2}", t.mean(), t.std()));
                    }
                    None => {
                        let _ = write!(s, " {:>18}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn plot_data(&self) -> String {
        let mut s = String::from("model\tbitrate\tmean_snr_db\tstd_snr_db\n");
        for t in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{:.4}\t{:.4}", t.model, t.bitrate, t.mean(), t.std());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(model: &str, bitrate: &str, snrs: &[f64]) -> EvalTable {
        EvalTable { model: model.into(), bitrate: bitrate.into(), snrs: snrs.to_vec() }
    }

    #[test]
    fn parses_eval_output() {
        let text =
            format!("{}clip\tsnr_db\ttotal_kbps\nx\t3.0\t1\ny\t5.0\t1\nmean\t4.0\t1\n", eval_preamble("harp", "64"));
        let t = parse_eval(&text).unwrap();
        assert_eq!(t, table("harp", "64", &[3.0, 5.0]));
        assert_eq!(t.mean(), 4.0);
        assert_eq!(t.std(), 1.0);
    }

    #[test]
    fn two_inputs_make_two_columns_in_stable_order() {
        let c = compare(vec![table("harp", "64", &[2.0]), table("base", "64", &[1.0])]).unwrap();
        let text = c.text_table();
        let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["bitrate", "base", "harp"]);
        assert!(c.incomplete.is_empty());
        let plot = c.plot_data();
        let rows: Vec<&str> = plot.lines().collect();
        assert_eq!(rows[0], "model\tbitrate\tmean_snr_db\tstd_snr_db");
        assert!(rows[1].starts_with("base\t64"));
        assert!(rows[2].starts_with("harp\t64"));
    }

    #[test]
    fn numeric_bitrates_sort_numerically_and_gaps_are_flagged() {
        let c = compare(vec![table("a", "128", &[1.0]), table("a", "64", &[1.0]), table("b", "64", &[1.0])]).unwrap();
        let order: Vec<_> = c.rows.iter().map(|t| (t.bitrate.as_str(), t.model.as_str())).collect();
        assert_eq!(order, [("64", "a"), ("64", "b"), ("128", "a")]);
        assert_eq!(c.incomplete, ["128"]);
    }

    #[test]
    fn needs_two_inputs() {
        assert!(compare(vec![table("a", "1", &[1.0])]).is_err());
    }
}
