//! File layout and writers. Everything written here is a pure function of
//! the resolved config so reruns produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(out: &Path, id: &str) -> Self {
        Layout { root: out.join(id) }
    }

    fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.root.join(sub);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    pub fn trajectories(&self) -> Result<PathBuf> {
        self.dir("trajectories")
    }

    pub fn reports(&self) -> Result<PathBuf> {
        self.dir("reports")
    }

    pub fn plotdata(&self) -> Result<PathBuf> {
        self.dir("plotdata")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// `1e-3` style tag used in file names.
pub fn eps_tag(eps: f64) -> String {
    format!("eps_{eps:e}")
}

pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        "nan".into()
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_else(|| "nan".into())
}

/// Comma separated table with a header row.
pub fn csv(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&x| fmt_num(x)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// `log10 ε` against `log10 err`, skipping missing and non-positive errors.
pub fn loglog(title: &str, eps: &[f64], errors: &[Option<f64>]) -> String {
    let mut s = format!("# {title}\n# log10_eps log10_err\n");
    for (e, err) in eps.iter().zip(errors) {
        if let Some(v) = err.filter(|v| *v > 0.0 && v.is_finite()) {
            let _ = writeln!(s, "{:e} {:e}", e.log10(), v.log10());
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_skips_missing() {
        let s = loglog("x", &[0.1, 0.01, 0.001], &[Some(0.1), None, Some(0.0)]);
        let data: Vec<&str> = s.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data, vec!["-1e0 -1e0"]);
    }

    #[test]
    fn csv_layout() {
        let s = csv(&["u".into(), "v".into()], &[vec![0.5, f64::NAN]]);
        assert_eq!(s, "u,v\n5e-1,nan\n");
        assert_eq!(eps_tag(1e-3), "eps_1e-3");
    }
}
