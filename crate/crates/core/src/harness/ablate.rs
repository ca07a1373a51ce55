use std::fs;

use super::train::{train, TrainConfig};
use crate::config::AblationFlags;
use crate::{Error, Result};

/// One named row of an ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationVariant {
    pub table: &'static str,
    pub name: &'static str,
    pub flags: AblationFlags,
}

const fn component_flags(resnet: bool, coag: bool, mamba: bool) -> AblationFlags {
    AblationFlags {
        use_resnet_branch: resnet,
        use_coag: coag,
        use_mambaconv: mamba,
        ..AblationFlags::FULL
    }
}

const fn block_flags(coasmamba: bool, coamamba: bool, doublelcoa: bool) -> AblationFlags {
    AblationFlags {
        use_coasmamba: coasmamba,
        use_coamamba: coamamba,
        use_doublelcoa: doublelcoa,
        ..AblationFlags::FULL
    }
}

/// Component ablations followed by block-placement ablations.
pub const VARIANTS: [AblationVariant; 9] = [
    AblationVariant { table: "table6", name: "Baseline", flags: component_flags(false, false, false) },
    AblationVariant { table: "table6", name: "w/o MambaConv", flags: component_flags(true, true, false) },
    AblationVariant { table: "table6", name: "w/o ResBranch", flags: component_flags(false, true, true) },
    AblationVariant { table: "table6", name: "w/o CoAG", flags: component_flags(true, false, true) },
    AblationVariant { table: "table6", name: "full", flags: AblationFlags::FULL },
    AblationVariant { table: "table7", name: "Baseline", flags: block_flags(false, false, false) },
    AblationVariant { table: "table7", name: "+CoASMamba", flags: block_flags(true, false, false) },
    AblationVariant { table: "table7", name: "+CoASMamba+CoAMamba", flags: block_flags(true, true, false) },
    AblationVariant { table: "table7", name: "full", flags: AblationFlags::FULL },
];

impl AblationVariant {
    /// `table6/w-o-mambaconv`-style identifier usable as a directory name.
    pub fn slug(&self) -> String {
        let name: String = self
            .name
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect();
        format!("{}-{}", self.table, name.trim_matches('-'))
    }
}

/// Resolves `table6`, `table7`, `all`, or a comma-separated list of slugs.
pub fn resolve_plan(plan: &str) -> Result<Vec<AblationVariant>> {
    match plan {
        "all" => Ok(VARIANTS.to_vec()),
        "table6" | "table7" => Ok(VARIANTS.iter().filter(|v| v.table == plan).copied().collect()),
        _ => plan
            .split(',')
            .map(|name| {
                let name = name.trim();
                VARIANTS
                    .iter()
                    .find(|v| v.slug() == name)
                    .copied()
                    .ok_or_else(|| Error::UnknownVariant(name.to_string()))
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub mean_dsc: f64,
    pub parameters: usize,
}

/// Trains and evaluates each variant of `plan` from the same seed and data,
/// then writes `ablation.csv` and `ablation.md` under the output directory.
pub fn ablate(base: &TrainConfig, plan: &str) -> Result<Vec<AblationRow>> {
    let variants = resolve_plan(plan)?;
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let mut cfg = base.clone();
        cfg.model.ablation = variant.flags;
        cfg.run_id = Some(format!("{}/{}", base.run_id(), variant.slug()));
        let artifacts = train(&cfg)?;
        let (_, store) = crate::model::MambaCafu::new(&cfg.model)?;
        rows.push(AblationRow {
            variant,
            mean_dsc: artifacts.report.mean_dsc,
            parameters: store.trainable_count(),
        });
    }
    let dir = base.out_dir.join(base.run_id());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let csv_path = dir.join("ablation.csv");
    fs::write(&csv_path, ablation_csv(&rows)).map_err(|e| Error::io(&csv_path, e))?;
    let md_path = dir.join("ablation.md");
    fs::write(&md_path, ablation_table(&rows)).map_err(|e| Error::io(&md_path, e))?;
    Ok(rows)
}

fn mark(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("table,variant,");
    out.push_str(&crate::config::AblationFlags::KEYS.join(","));
    out.push_str(",parameters,mean_dsc\n");
    for r in rows {
        let flags: Vec<String> = r.variant.flags.values().iter().map(bool::to_string).collect();
        out.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            r.variant.table,
            r.variant.name,
            flags.join(","),
            r.parameters,
            r.mean_dsc
        ));
    }
    out
}

/// Markdown table with the flag columns each ablation table varies.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    for table in ["table6", "table7"] {
        let sel: Vec<_> = rows.iter().filter(|r| r.variant.table == table).collect();
        if sel.is_empty() {
            continue;
        }
        let (cols, pick): ([&str; 3], fn(&AblationFlags) -> [bool; 3]) = if table == "table6" {
            (["ResB", "CoAG", "MambaConv"], |f| [f.use_resnet_branch, f.use_coag, f.use_mambaconv])
        } else {
            (["CoASMamba", "CoAMamba", "DoubleLCoA"], |f| [f.use_coasmamba, f.use_coamamba, f.use_doublelcoa])
        };
        out.push_str(&format!("### {table}\n\n| # | Architecture | {} | DSC |\n", cols.join(" | ")));
        out.push_str("|---|---|---|---|---|---|\n");
        for (i, r) in sel.iter().enumerate() {
            let f = pick(&r.variant.flags);
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.2} |\n",
                i + 1,
                r.variant.name,
                mark(f[0]),
                mark(f[1]),
                mark(f[2]),
                100.0 * r.mean_dsc
            ));
        }
        out.push('\n');
    }
    out
}
