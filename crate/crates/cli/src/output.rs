//! Trajectory CSV serialization and run reports. The CSV schema is fixed;
//! identical configs produce byte-identical files.

use ofrl::plant::Scenario;
use ofrl::sim::{RunStatus, SimLog};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Fixed-schema header:
/// `t, x_1..x_2n, xhat_1..xhat_2n, s_1..s_2n, shat_1..shat_2n, u_1..u_m,
///  Wc_1..Wc_L, Wa_1..Wa_L, gamma_min_eig, pe_metric, cost, V_se`.
pub fn csv_header(n2: usize, m: usize, l: usize) -> String {
    let mut cols = vec!["t".to_string()];
    let block = |prefix: &str, count: usize| -> Vec<String> {
        (1..=count).map(|i| format!("{prefix}_{i}")).collect()
    };
    cols.extend(block("x", n2));
    cols.extend(block("xhat", n2));
    cols.extend(block("s", n2));
    cols.extend(block("shat", n2));
    cols.extend(block("u", m));
    cols.extend(block("Wc", l));
    cols.extend(block("Wa", l));
    cols.push("gamma_min_eig".to_string());
    cols.push("pe_metric".to_string());
    cols.push("cost".to_string());
    cols.push("V_se".to_string());
    cols.join(",")
}

pub fn write_csv(path: &Path, scenario: &Scenario, log: &SimLog) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let n2 = 2 * scenario.plant.n;
    let m = scenario.plant.m;
    let l = scenario.basis.len();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", csv_header(n2, m, l))?;
    let mut row_buf = String::new();
    for row in &log.rows {
        row_buf.clear();
        row_buf.push_str(&format!("{}", row.t));
        for block in [&row.x, &row.xhat, &row.s, &row.shat, &row.u, &row.wc, &row.wa] {
            for v in block.iter() {
                row_buf.push_str(&format!(",{v}"));
            }
        }
        row_buf.push_str(&format!(
            ",{},{},{},{}",
            row.gamma_min_eig, row.pe_metric, row.cost, row.v_se
        ));
        writeln!(out, "{row_buf}")?;
    }
    Ok(())
}

/// Counts logged samples where x or x̂ is outside the open constraint box.
pub fn safety_violations(scenario: &Scenario, log: &SimLog) -> usize {
    let n2 = 2 * scenario.plant.n;
    log.rows
        .iter()
        .filter(|row| {
            (0..n2).any(|i| {
                let p = scenario.plant.limits.pair(i);
                !(row.x[i] > p.lower && row.x[i] < p.upper)
                    || !(row.xhat[i] > p.lower && row.xhat[i] < p.upper)
            })
        })
        .count()
}

pub struct RunReport {
    pub scenario: String,
    pub gains: String,
    pub learning_cost: Option<f64>,
    pub final_cost: f64,
    pub status: RunStatus,
    pub runtime_s: f64,
    pub safety_violations: usize,
    pub outputs: Vec<PathBuf>,
}

impl RunReport {
    pub fn print(&self) {
        let files: Vec<String> = self
            .outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        let learning = match self.learning_cost {
            Some(j) => format!(" learning_phase_cost={j:.4}"),
            None => String::new(),
        };
        println!(
            "scenario={} status={} final_J={:.4}{} safety_violations={} runtime={:.1}s gains=[{}] outputs=[{}]",
            self.scenario,
            self.status,
            self.final_cost,
            learning,
            self.safety_violations,
            self.runtime_s,
            self.gains,
            files.join(", ")
        );
    }
}

pub fn gain_summary(sc: &Scenario) -> String {
    let g = &sc.gains;
    format!(
        "k={} alpha={} beta1={} kc={} ka1={} ka2={} beta={} gamma={}",
        g.k, g.alpha, g.beta1, g.kc, g.ka1, g.ka2, g.beta, g.gamma
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_two_state() {
        let h = csv_header(2, 1, 3);
        assert_eq!(
            h,
            "t,x_1,x_2,xhat_1,xhat_2,s_1,s_2,shat_1,shat_2,u_1,\
             Wc_1,Wc_2,Wc_3,Wa_1,Wa_2,Wa_3,gamma_min_eig,pe_metric,cost,V_se"
        );
    }

    #[test]
    fn header_column_count_manipulator() {
        // 1 + 4*4 + 2 + 2*10 + 4
        assert_eq!(csv_header(4, 2, 10).split(',').count(), 43);
    }
}
