//! Sectioned `key = value` experiment configuration.
//!
//! Grammar: `[section]` headers, `key = value` lines, `#` starts a comment,
//! no nesting. Unknown sections or keys are rejected with their line number.
//! Missing keys take defaults; which keys were defaulted is recorded.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use pxkd_core::distill::FusionMethod;
use pxkd_core::losses::{LossConfig, LossVariant};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    pub kappa: f64,
    pub gallery_per_class: usize,
    pub probe_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeacherConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub count: usize,
    pub loss: LossVariant,
    pub m: f64,
    pub s: f64,
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionConfig {
    pub method: FusionMethod,
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudentConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Proxyless,
    L2kd,
    Scratch,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Proxyless => "proxyless",
            Method::L2kd => "l2kd",
            Method::Scratch => "scratch",
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proxyless" => Ok(Method::Proxyless),
            "l2kd" => Ok(Method::L2kd),
            "scratch" => Ok(Method::Scratch),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistillConfig {
    pub methods: Vec<Method>,
    pub loss: LossVariant,
    /// Margins for the inherited-classifier run; more than one value sweeps.
    pub m: Vec<f64>,
    pub s: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_proxyless: f64,
    pub lr_l2kd: f64,
    pub lr_scratch: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub genuine_per_class: usize,
    pub impostor_count: usize,
    pub far: Vec<f64>,
    pub distractors: usize,
    pub distractor_kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Single,
    Multiple,
    Both,
}

impl ModeSelection {
    pub fn single(&self) -> bool {
        matches!(self, ModeSelection::Single | ModeSelection::Both)
    }

    pub fn multiple(&self) -> bool {
        matches!(self, ModeSelection::Multiple | ModeSelection::Both)
    }

    fn name(&self) -> &'static str {
        match self {
            ModeSelection::Single => "single",
            ModeSelection::Multiple => "multiple",
            ModeSelection::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub mode: ModeSelection,
}

/// The effective, fully-typed configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigValues {
    pub data: DataConfig,
    pub teacher: TeacherConfig,
    pub fusion: FusionConfig,
    pub student: StudentConfig,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub values: ConfigValues,
    /// `section.key` entries that were filled from defaults.
    pub defaulted: Vec<String>,
}

const SECTIONS: &[&str] = &["data", "teacher", "fusion", "student", "distill", "eval", "run"];

/// Raw `(section, key) -> (value, line)` storage for one parse.
struct RawConfig {
    entries: Vec<(String, String, String, usize)>,
}

impl RawConfig {
    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let pos = self
            .entries
            .iter()
            .position(|(s, k, _, _)| s == section && k == key)?;
        let (_, _, value, line) = self.entries.remove(pos);
        Some((value, line))
    }
}

fn parse_raw(text: &str) -> Result<RawConfig> {
    let mut entries = Vec::new();
    let mut section: Option<String> = None;
    let mut seen_keys: BTreeSet<(String, String)> = BTreeSet::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(CliError::ConfigLine {
                    line: line_no,
                    msg: format!("malformed section header '{line}'"),
                });
            }
            let name = line[1..line.len() - 1].trim().to_ascii_lowercase();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(CliError::ConfigLine {
                    line: line_no,
                    msg: format!("unknown section '[{name}]'"),
                });
            }
            section = Some(name);
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(CliError::ConfigLine {
                line: line_no,
                msg: format!("expected 'key = value', got '{line}'"),
            });
        };
        let key = line[..eq].trim().to_ascii_lowercase();
        let value = line[eq + 1..].trim().to_string();
        let Some(ref sec) = section else {
            return Err(CliError::ConfigLine {
                line: line_no,
                msg: format!("key '{key}' appears before any [section]"),
            });
        };
        if key.is_empty() {
            return Err(CliError::ConfigLine {
                line: line_no,
                msg: "empty key".into(),
            });
        }
        if !seen_keys.insert((sec.clone(), key.clone())) {
            return Err(CliError::ConfigLine {
                line: line_no,
                msg: format!("duplicate key '{key}' in [{sec}]"),
            });
        }
        entries.push((sec.clone(), key, value, line_no));
    }
    Ok(RawConfig { entries })
}

fn parse_scalar<T: FromStr>(value: &str, line: usize, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| CliError::ConfigLine {
        line,
        msg: format!("'{value}' is not a valid {what}"),
    })
}

fn parse_list<T: FromStr>(value: &str, line: usize, what: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Err(CliError::ConfigLine {
            line,
            msg: format!("empty {what} list"),
        });
    }
    value
        .split(',')
        .map(|item| parse_scalar(item, line, what))
        .collect()
}

/// Pulls `section.key` as a typed value, or records the default.
struct Fetch<'a> {
    raw: &'a mut RawConfig,
    defaulted: Vec<String>,
}

impl<'a> Fetch<'a> {
    fn scalar<T: FromStr>(
        &mut self,
        section: &str,
        key: &str,
        what: &str,
        default: T,
    ) -> Result<T> {
        match self.raw.take(section, key) {
            Some((value, line)) => parse_scalar(&value, line, what),
            None => {
                self.defaulted.push(format!("{section}.{key}"));
                Ok(default)
            }
        }
    }

    fn list<T: FromStr>(
        &mut self,
        section: &str,
        key: &str,
        what: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>> {
        match self.raw.take(section, key) {
            Some((value, line)) => parse_list(&value, line, what),
            None => {
                self.defaulted.push(format!("{section}.{key}"));
                Ok(default)
            }
        }
    }

    fn optional(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.raw.take(section, key)
    }
}

/// Parses a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
    parse_config_str(&text)
}

/// Parses config text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut raw = parse_raw(text)?;
    let mut fetch = Fetch {
        raw: &mut raw,
        defaulted: Vec::new(),
    };

    // [data]
    let source = match fetch.optional("data", "source") {
        Some((value, line)) => match value.to_ascii_lowercase().as_str() {
            "synthetic" => DataSource::Synthetic,
            "csv" => {
                let (p, _) = fetch.optional("data", "csv_path").ok_or_else(|| {
                    CliError::ConfigLine {
                        line,
                        msg: "source = csv requires data.csv_path".into(),
                    }
                })?;
                DataSource::Csv {
                    path: PathBuf::from(p),
                }
            }
            other => {
                return Err(CliError::ConfigLine {
                    line,
                    msg: format!("unknown data source '{other}'"),
                })
            }
        },
        None => {
            fetch.defaulted.push("data.source".into());
            DataSource::Synthetic
        }
    };
    let data = DataConfig {
        source,
        classes: fetch.scalar("data", "classes", "integer", 64)?,
        per_class: fetch.scalar("data", "per_class", "integer", 20)?,
        input_dim: fetch.scalar("data", "input_dim", "integer", 32)?,
        kappa: fetch.scalar("data", "kappa", "number", 16.0)?,
        gallery_per_class: fetch.scalar("data", "gallery_per_class", "integer", 1)?,
        probe_per_class: fetch.scalar("data", "probe_per_class", "integer", 4)?,
    };

    // [teacher]
    let teacher_loss = match fetch.optional("teacher", "loss") {
        Some((value, line)) => LossVariant::from_str(&value).map_err(|e| CliError::ConfigLine {
            line,
            msg: e.to_string(),
        })?,
        None => {
            fetch.defaulted.push("teacher.loss".into());
            LossVariant::ArcFace
        }
    };
    let teacher = TeacherConfig {
        hidden: fetch.list("teacher", "hidden", "integer", vec![512, 512, 512, 512])?,
        embed_dim: fetch.scalar("teacher", "embed_dim", "integer", 16)?,
        count: fetch.scalar("teacher", "count", "integer", 1)?,
        loss: teacher_loss,
        m: fetch.scalar("teacher", "m", "number", 0.5)?,
        s: fetch.scalar("teacher", "s", "number", 64.0)?,
        lr0: fetch.scalar("teacher", "lr0", "number", 0.1)?,
        epochs: fetch.scalar("teacher", "epochs", "integer", 8)?,
        batch_size: fetch.scalar("teacher", "batch_size", "integer", 64)?,
        momentum: fetch.scalar("teacher", "momentum", "number", 0.9)?,
        weight_decay: fetch.scalar("teacher", "weight_decay", "number", 4e-5)?,
    };

    // [fusion]
    let fusion_method = match fetch.optional("fusion", "method") {
        Some((value, line)) => match value.to_ascii_lowercase().as_str() {
            "pca" => FusionMethod::Pca,
            "linear" | "linearlayer" | "linear_layer" => FusionMethod::LinearLayer,
            other => {
                return Err(CliError::ConfigLine {
                    line,
                    msg: format!("unknown fusion method '{other}'"),
                })
            }
        },
        None => {
            fetch.defaulted.push("fusion.method".into());
            FusionMethod::Pca
        }
    };
    let fusion = FusionConfig {
        method: fusion_method,
        lr0: fetch.scalar("fusion", "lr0", "number", 0.1)?,
        epochs: fetch.scalar("fusion", "epochs", "integer", 16)?,
        batch_size: fetch.scalar("fusion", "batch_size", "integer", 64)?,
    };

    // [student]
    let student = StudentConfig {
        hidden: fetch.list("student", "hidden", "integer", vec![64, 64])?,
        embed_dim: fetch.scalar("student", "embed_dim", "integer", 16)?,
    };

    // [distill]
    let methods = match fetch.optional("distill", "methods") {
        Some((value, line)) => {
            let mut methods = Vec::new();
            for item in value.split(',') {
                methods.push(Method::from_str(item).map_err(|e| CliError::ConfigLine {
                    line,
                    msg: e,
                })?);
            }
            methods
        }
        None => {
            fetch.defaulted.push("distill.methods".into());
            vec![Method::Proxyless, Method::L2kd, Method::Scratch]
        }
    };
    let distill_loss = match fetch.optional("distill", "loss") {
        Some((value, line)) => LossVariant::from_str(&value).map_err(|e| CliError::ConfigLine {
            line,
            msg: e.to_string(),
        })?,
        None => {
            fetch.defaulted.push("distill.loss".into());
            LossVariant::ArcFace
        }
    };
    let distill = DistillConfig {
        methods,
        loss: distill_loss,
        m: fetch.list("distill", "m", "number", vec![0.5])?,
        s: fetch.scalar("distill", "s", "number", 64.0)?,
        epochs: fetch.scalar("distill", "epochs", "integer", 16)?,
        batch_size: fetch.scalar("distill", "batch_size", "integer", 64)?,
        lr_proxyless: fetch.scalar("distill", "lr_proxyless", "number", 0.35)?,
        lr_l2kd: fetch.scalar("distill", "lr_l2kd", "number", 0.9)?,
        lr_scratch: fetch.scalar("distill", "lr_scratch", "number", 0.1)?,
        momentum: fetch.scalar("distill", "momentum", "number", 0.9)?,
        weight_decay: fetch.scalar("distill", "weight_decay", "number", 4e-5)?,
    };

    // [eval]
    let eval = EvalConfig {
        genuine_per_class: fetch.scalar("eval", "genuine_per_class", "integer", 3)?,
        impostor_count: fetch.scalar("eval", "impostor_count", "integer", 200)?,
        far: fetch.list("eval", "far", "number", vec![0.01, 1e-4])?,
        distractors: fetch.scalar("eval", "distractors", "integer", 0)?,
        distractor_kappa: fetch.scalar("eval", "distractor_kappa", "number", 50.0)?,
    };

    // [run]
    let mode = match fetch.optional("run", "mode") {
        Some((value, line)) => match value.to_ascii_lowercase().as_str() {
            "single" => ModeSelection::Single,
            "multiple" => ModeSelection::Multiple,
            "both" => ModeSelection::Both,
            other => {
                return Err(CliError::ConfigLine {
                    line,
                    msg: format!("unknown mode '{other}'"),
                })
            }
        },
        None => {
            fetch.defaulted.push("run.mode".into());
            ModeSelection::Both
        }
    };
    let run = RunConfig {
        seeds: fetch.list("run", "seeds", "integer", vec![0, 1, 2, 3, 4])?,
        mode,
    };

    let defaulted = fetch.defaulted;
    // Anything left in raw is an unknown key.
    if let Some((section, key, _, line)) = raw.entries.first() {
        return Err(CliError::ConfigLine {
            line: *line,
            msg: format!("unknown key '{key}' in [{section}]"),
        });
    }

    let cfg = ExperimentConfig {
        values: ConfigValues {
            data,
            teacher,
            fusion,
            student,
            distill,
            eval,
            run,
        },
        defaulted,
    };
    validate(&cfg.values)?;
    Ok(cfg)
}

/// Structural checks plus the referenced-paths rule: everything the run will
/// read must resolve before any training starts.
fn validate(v: &ConfigValues) -> Result<()> {
    if let DataSource::Csv { path } = &v.data.source {
        if !path.exists() {
            return Err(CliError::Config(format!(
                "data.csv_path '{}' does not exist",
                path.display()
            )));
        }
    }
    if v.run.seeds.is_empty() {
        return Err(CliError::Config("run.seeds is empty".into()));
    }
    if v.distill.methods.is_empty() {
        return Err(CliError::Config("distill.methods is empty".into()));
    }
    if v.distill.m.is_empty() {
        return Err(CliError::Config("distill.m is empty".into()));
    }
    if v.teacher.count == 0 {
        return Err(CliError::Config("teacher.count must be >= 1".into()));
    }
    // Loss configs must construct (scale/margin constraints).
    for &m in &v.distill.m {
        LossConfig::new(v.distill.loss, m, v.distill.s)
            .map_err(|e| CliError::Config(format!("distill loss: {e}")))?;
    }
    LossConfig::new(v.teacher.loss, v.teacher.m, v.teacher.s)
        .map_err(|e| CliError::Config(format!("teacher loss: {e}")))?;
    if v.teacher.count >= 2 && v.student.embed_dim > v.teacher.embed_dim * v.teacher.count {
        return Err(CliError::Config(
            "student.embed_dim exceeds the concatenated teacher dimension".into(),
        ));
    }
    if v.teacher.count == 1 && v.student.embed_dim != v.teacher.embed_dim {
        return Err(CliError::Config(format!(
            "student.embed_dim {} must equal teacher.embed_dim {} for distillation",
            v.student.embed_dim, v.teacher.embed_dim
        )));
    }
    Ok(())
}

fn fmt_list<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ConfigValues {
    /// Canonical config text: every effective key written explicitly.
    /// Re-parsing this text reproduces the same values.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "[data]").unwrap();
        match &self.data.source {
            DataSource::Synthetic => writeln!(w, "source = synthetic").unwrap(),
            DataSource::Csv { path } => {
                writeln!(w, "source = csv").unwrap();
                writeln!(w, "csv_path = {}", path.display()).unwrap();
            }
        }
        writeln!(w, "classes = {}", self.data.classes).unwrap();
        writeln!(w, "per_class = {}", self.data.per_class).unwrap();
        writeln!(w, "input_dim = {}", self.data.input_dim).unwrap();
        writeln!(w, "kappa = {}", self.data.kappa).unwrap();
        writeln!(w, "gallery_per_class = {}", self.data.gallery_per_class).unwrap();
        writeln!(w, "probe_per_class = {}", self.data.probe_per_class).unwrap();

        writeln!(w, "\n[teacher]").unwrap();
        writeln!(w, "hidden = {}", fmt_list(&self.teacher.hidden)).unwrap();
        writeln!(w, "embed_dim = {}", self.teacher.embed_dim).unwrap();
        writeln!(w, "count = {}", self.teacher.count).unwrap();
        writeln!(w, "loss = {}", self.teacher.loss.name()).unwrap();
        writeln!(w, "m = {}", self.teacher.m).unwrap();
        writeln!(w, "s = {}", self.teacher.s).unwrap();
        writeln!(w, "lr0 = {}", self.teacher.lr0).unwrap();
        writeln!(w, "epochs = {}", self.teacher.epochs).unwrap();
        writeln!(w, "batch_size = {}", self.teacher.batch_size).unwrap();
        writeln!(w, "momentum = {}", self.teacher.momentum).unwrap();
        writeln!(w, "weight_decay = {}", self.teacher.weight_decay).unwrap();

        writeln!(w, "\n[fusion]").unwrap();
        let method = match self.fusion.method {
            FusionMethod::Pca => "pca",
            FusionMethod::LinearLayer => "linear",
        };
        writeln!(w, "method = {method}").unwrap();
        writeln!(w, "lr0 = {}", self.fusion.lr0).unwrap();
        writeln!(w, "epochs = {}", self.fusion.epochs).unwrap();
        writeln!(w, "batch_size = {}", self.fusion.batch_size).unwrap();

        writeln!(w, "\n[student]").unwrap();
        writeln!(w, "hidden = {}", fmt_list(&self.student.hidden)).unwrap();
        writeln!(w, "embed_dim = {}", self.student.embed_dim).unwrap();

        writeln!(w, "\n[distill]").unwrap();
        let names: Vec<&str> = self.distill.methods.iter().map(|m| m.name()).collect();
        writeln!(w, "methods = {}", names.join(",")).unwrap();
        writeln!(w, "loss = {}", self.distill.loss.name()).unwrap();
        writeln!(w, "m = {}", fmt_list(&self.distill.m)).unwrap();
        writeln!(w, "s = {}", self.distill.s).unwrap();
        writeln!(w, "epochs = {}", self.distill.epochs).unwrap();
        writeln!(w, "batch_size = {}", self.distill.batch_size).unwrap();
        writeln!(w, "lr_proxyless = {}", self.distill.lr_proxyless).unwrap();
        writeln!(w, "lr_l2kd = {}", self.distill.lr_l2kd).unwrap();
        writeln!(w, "lr_scratch = {}", self.distill.lr_scratch).unwrap();
        writeln!(w, "momentum = {}", self.distill.momentum).unwrap();
        writeln!(w, "weight_decay = {}", self.distill.weight_decay).unwrap();

        writeln!(w, "\n[eval]").unwrap();
        writeln!(w, "genuine_per_class = {}", self.eval.genuine_per_class).unwrap();
        writeln!(w, "impostor_count = {}", self.eval.impostor_count).unwrap();
        writeln!(w, "far = {}", fmt_list(&self.eval.far)).unwrap();
        writeln!(w, "distractors = {}", self.eval.distractors).unwrap();
        writeln!(w, "distractor_kappa = {}", self.eval.distractor_kappa).unwrap();

        writeln!(w, "\n[run]").unwrap();
        writeln!(w, "seeds = {}", fmt_list(&self.run.seeds)).unwrap();
        writeln!(w, "mode = {}", self.run.mode.name()).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse_config_str("[data]\nclasses = 8\n[run]\nseeds = 1,2\n").unwrap();
        assert_eq!(cfg.values.data.classes, 8);
        assert_eq!(cfg.values.run.seeds, vec![1, 2]);
        assert_eq!(cfg.values.teacher.m, 0.5);
        assert_eq!(cfg.values.teacher.s, 64.0);
        assert!(cfg.defaulted.contains(&"teacher.m".to_string()));
        assert!(cfg.defaulted.contains(&"distill.methods".to_string()));
        assert!(!cfg.defaulted.contains(&"data.classes".to_string()));
    }

    #[test]
    fn type_error_reports_line() {
        let text = "[data]\nclasses = 8\n[distill]\nm = banana\n";
        match parse_config_str(text) {
            Err(CliError::ConfigLine { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("banana"));
            }
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_section_are_rejected() {
        match parse_config_str("[data]\nclasss = 8\n") {
            Err(CliError::ConfigLine { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("classs"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_config_str("[nonsense]\n"),
            Err(CliError::ConfigLine { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(matches!(
            parse_config_str("[data]\nclasses = 3\nclasses = 4\n"),
            Err(CliError::ConfigLine { line: 3, .. })
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg =
            parse_config_str("# top\n[data]\n\nclasses = 12 # trailing\n[run]\nseeds = 3\n")
                .unwrap();
        assert_eq!(cfg.values.data.classes, 12);
        assert_eq!(cfg.values.run.seeds, vec![3]);
    }

    #[test]
    fn missing_csv_path_is_a_config_error() {
        let err = parse_config_str("[data]\nsource = csv\ncsv_path = /nonexistent/x.csv\n");
        assert!(matches!(err, Err(CliError::Config(_))));
    }

    #[test]
    fn canonical_text_round_trips() {
        let cfg = parse_config_str(
            "[data]\nclasses = 6\nper_class = 9\nkappa = 12.5\n[distill]\nm = 0.2,0.35,0.5\n[run]\nseeds = 7\nmode = single\n",
        )
        .unwrap();
        let text = cfg.values.to_config_text();
        let again = parse_config_str(&text).unwrap();
        assert_eq!(cfg.values, again.values);
        assert!(again.defaulted.is_empty(), "{:?}", again.defaulted);
    }

    #[test]
    fn asoftmax_margin_is_validated() {
        let err = parse_config_str("[distill]\nloss = asoftmax\nm = 0.5\n");
        assert!(matches!(err, Err(CliError::Config(_))));
        let ok = parse_config_str("[distill]\nloss = asoftmax\nm = 2\n");
        assert!(ok.is_ok());
    }

    #[test]
    fn embed_dim_mismatch_is_rejected() {
        let err = parse_config_str("[teacher]\nembed_dim = 16\n[student]\nembed_dim = 8\n");
        assert!(matches!(err, Err(CliError::Config(_))));
    }
}
