use hirsute_core::protocol::{
    render_table3_csv, render_table3_text, run_protocol, table3_rows, ProtocolConfig, SplitPlan,
};
use log::{info, warn};

use super::{load_data, prepare_out, score_all, scopes, write_file, write_histograms, write_json};
use super::{CliResult, REPORT_FILE, TABLE_FILE};
use crate::config::{Flags, RunConfig};

pub fn evaluate(flags: &Flags) -> CliResult {
    let cfg = RunConfig::resolve(flags)?;
    let (ds, store) = load_data(&cfg)?;
    let out = prepare_out(&cfg)?;
    let protocol = ProtocolConfig {
        target_fmr: cfg.target_fmr,
        groups: cfg.groups.clone(),
        plan: SplitPlan {
            seed: cfg.seed,
            n_splits: cfg.splits,
        },
        scheme: cfg.classes,
        scoring: cfg.scoring(),
    };
    let mut results = Vec::new();
    for scope in scopes(&cfg, &ds)? {
        info!("evaluating scope {scope}");
        let r = run_protocol(&ds, &store, &scope, &protocol)?;
        for s in &r.splits {
            for g in s.groups.iter().filter(|g| g.fnmr_undefined) {
                warn!("{scope} split {}: {} has no genuine pairs; FNMR undefined", s.index, g.category);
            }
        }
        results.push(r);
    }
    write_json(&out.join(REPORT_FILE), &results)?;
    let (groups, rows) = table3_rows(&results);
    write_file(&out.join(TABLE_FILE), render_table3_csv(&groups, &rows))?;

    // score distributions over each full scope
    let cells = score_all(&cfg, &ds, &store)?;
    write_histograms(&out.join("histograms"), &cells, cfg.histogram_coarsen)?;

    print!("{}", render_table3_text(&groups, &rows, cfg.splits));
    Ok(())
}
