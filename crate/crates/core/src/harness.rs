//! Scenario loading, the detect-switch-detect loop, built-in scenarios and result files.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{synth_zda, AttackDriver, CovertAttacker};
use crate::analysis::{
    attack_support, classify_switch_boundedness, enumerate_safe_modes, local_detectability_check,
    privacy_check, safe_switch_verdicts, LocalDetectabilityVerdict, SafeSwitchVerdict, SwitchBoundedness,
};
use crate::error::{Error, Result};
use crate::numerics::{fmt_f64, Matrix, Vector};
use crate::observers::{
    design_central_gain, design_uio, CentralObserver, ResidualTrace, UioRealization,
    CALIBRATION_TRANSIENT, DEFAULT_ETA, THRESHOLD_FLOOR,
};
use crate::plant::{rk4_step, time_grid, PlantModel, SimTrace, DEFAULT_ALPHA, DEFAULT_DT, DEFAULT_GAMMA, OVERFLOW_GUARD};
use crate::topology::{
    components_of_delta, delta_laplacian, partition, ClusterPartition, PartitionedModel, TopologyLibrary,
    WeightedGraph,
};

/// Built-in scenarios, by name. The first entry is the normative example of the file format.
const BUILTINS: &[(&str, &str)] = &[
    ("sec5-19node", include_str!("../scenarios/sec5-19node.toml")),
    ("sec5-case1", include_str!("../scenarios/sec5-case1.toml")),
    ("sec5-case2", include_str!("../scenarios/sec5-case2.toml")),
    ("sec5-case3", include_str!("../scenarios/sec5-case3.toml")),
    ("sec5-covert", include_str!("../scenarios/sec5-covert.toml")),
    ("sec5-attack-free", include_str!("../scenarios/sec5-attack-free.toml")),
];

/// Longest attack-free run used to calibrate thresholds.
const CALIBRATION_HORIZON: f64 = 30.0;

/// Relative cut-off used to read the attack support off `x̃0`.
const SUPPORT_TOL: f64 = 1e-6;

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    seed: Option<u64>,
    horizon: f64,
    dt: Option<f64>,
    eta: Option<f64>,
    observer_init: Option<String>,
    record_every: Option<usize>,
    gains: Option<GainsFile>,
    network: NetworkFile,
    clusters: Vec<ClusterFile>,
    monitors: MonitorsFile,
    attack: Option<AttackFile>,
    detection: Option<DetectionFile>,
    initial: Option<InitialFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsFile {
    alpha: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    nodes: usize,
    edges: Vec<(f64, f64, f64)>,
    #[serde(default)]
    modes: Vec<ModeFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeFile {
    edges: Option<Vec<(f64, f64, f64)>>,
    toggle: Option<Vec<(f64, f64, f64)>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterFile {
    nodes: Vec<usize>,
    center: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonitorsFile {
    #[serde(default)]
    positions: Vec<usize>,
    #[serde(default)]
    velocities: Vec<usize>,
    #[serde(default)]
    local: Vec<LocalFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalFile {
    node: usize,
    measured: Option<Vec<usize>>,
    assumed_attacked: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttackFile {
    variant: String,
    #[serde(default)]
    actuators: Vec<usize>,
    t_a: Option<f64>,
    magnitude: Option<f64>,
    zda_scale: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ThresholdsFile {
    Keyword(String),
    Fixed { global: f64, local: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionFile {
    thresholds: Option<ThresholdsFile>,
    arm_time: Option<f64>,
    stop_on_global_detection: Option<bool>,
    switch_preference: Option<String>,
    candidate_modes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialFile {
    positions: Option<Vec<f64>>,
    velocities: Option<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Validated scenario

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackVariant {
    None,
    Zda,
    Covert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub variant: AttackVariant,
    pub t_a: f64,
    /// Covert step magnitude.
    pub magnitude: f64,
    /// Largest entry of `|x̃0|` for the zero-dynamics attack.
    pub zda_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverInit {
    /// Observers start at zero.
    Zero,
    /// Observers start at the attack-free initial state.
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Thresholds {
    Calibrate,
    Fixed { global: f64, local: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchPreference {
    Any,
    Bounded,
    Divergent,
}

/// A local observer placed at `node` in `cluster`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMonitor {
    pub cluster: usize,
    pub node: usize,
    pub measured: Vec<usize>,
    pub assumed_attacked: Vec<usize>,
}

/// Results of the load-time condition checks.
#[derive(Debug, Clone)]
pub struct LoadChecks {
    pub privacy: bool,
    pub local: Vec<LocalDetectabilityVerdict>,
    pub forced: bool,
}

impl LoadChecks {
    pub fn all_pass(&self) -> bool {
        self.privacy && self.local.iter().all(|v| v.all_pass)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub plant: PlantModel,
    pub clusters: ClusterPartition,
    pub partitioned: PartitionedModel,
    pub monitors: Vec<LocalMonitor>,
    pub attack: AttackConfig,
    pub horizon: f64,
    pub dt: f64,
    pub eta: f64,
    pub observer_init: ObserverInit,
    pub record_every: usize,
    pub thresholds: Thresholds,
    pub arm_time: f64,
    pub stop_on_global_detection: bool,
    pub switch_preference: SwitchPreference,
    /// Library modes the loop may switch to; `None` allows every mode.
    pub candidate_modes: Option<Vec<usize>>,
    pub initial_positions: Option<Vec<f64>>,
    pub initial_velocities: Option<Vec<f64>>,
    pub checks: LoadChecks,
}

fn node_index(field: &str, v: usize, n: usize) -> Result<usize> {
    if v == 0 || v > n {
        return Err(Error::parse(field, format!("node {v} outside 1..={n}")));
    }
    Ok(v - 1)
}

fn node_list(field: &str, vs: &[usize], n: usize) -> Result<Vec<usize>> {
    vs.iter()
        .enumerate()
        .map(|(k, &v)| node_index(&format!("{field}[{k}]"), v, n))
        .collect()
}

fn edge_list(field: &str, es: &[(f64, f64, f64)], n: usize) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::with_capacity(es.len());
    for (k, &(i, j, w)) in es.iter().enumerate() {
        let f = format!("{field}[{k}]");
        let as_node = |x: f64| -> Result<usize> {
            if x.fract() != 0.0 || x < 1.0 {
                return Err(Error::parse(&f, format!("node {x} is not a positive integer")));
            }
            node_index(&f, x as usize, n)
        };
        out.push((as_node(i)?, as_node(j)?, w));
    }
    Ok(out)
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(field, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(field, format!("must be non-negative and finite, got {v}")))
    }
}

/// Loads a scenario file, or a built-in scenario when `path` names one.
pub fn load_scenario(path: &str) -> Result<Scenario> {
    load_scenario_with(path, false)
}

/// As [`load_scenario`]; `force` keeps scenarios that fail the load-time checks.
pub fn load_scenario_with(path: &str, force: bool) -> Result<Scenario> {
    if !Path::new(path).exists() {
        if let Some(src) = builtin_source(path) {
            return parse_scenario(src, path, force);
        }
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path, force)
}

pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let src = builtin_source(name)
        .ok_or_else(|| Error::invalid(format!("no built-in scenario named `{name}`")))?;
    parse_scenario(src, name, false)
}

/// Parses and validates scenario text; `origin` labels errors.
pub fn parse_scenario(text: &str, origin: &str, force: bool) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let at = e
            .span()
            .map(|s| {
                let line = text[..s.start.min(text.len())].lines().count().max(1);
                format!(" (line {line})")
            })
            .unwrap_or_default();
        Error::parse(origin, format!("{msg}{at}"))
    })?;
    let mut s = validate(file, origin)?;
    s.checks.forced = force;
    if !force && !s.checks.all_pass() {
        let mut why = Vec::new();
        if !s.checks.privacy {
            why.push("privacy check failed (consensus direction is observable)".to_string());
        }
        for v in s.checks.local.iter().filter(|v| !v.all_pass) {
            why.push(format!(
                "local detectability fails at node {} of cluster {} (degree {}, rank {}, pencil {})",
                v.monitor + 1,
                v.cluster + 1,
                v.cond_degree,
                v.cond_rank,
                v.cond_pencil
            ));
        }
        return Err(Error::LoadRejected(format!("{origin}: {}", why.join("; "))));
    }
    Ok(s)
}

fn validate(f: ScenarioFile, origin: &str) -> Result<Scenario> {
    let n = f.network.nodes;
    if n == 0 {
        return Err(Error::parse("network.nodes", "must be at least 1"));
    }
    let gains = f.gains.clone().unwrap_or(GainsFile { alpha: None, gamma: None });
    let alpha = positive("gains.alpha", gains.alpha.unwrap_or(DEFAULT_ALPHA))?;
    let gamma = positive("gains.gamma", gains.gamma.unwrap_or(DEFAULT_GAMMA))?;
    let horizon = non_negative("horizon", f.horizon)?;
    let dt = positive("dt", f.dt.unwrap_or(DEFAULT_DT))?;
    let eta = positive("eta", f.eta.unwrap_or(DEFAULT_ETA))?;
    let record_every = f.record_every.unwrap_or(1);
    if record_every == 0 {
        return Err(Error::parse("record_every", "must be at least 1"));
    }
    let observer_init = match f.observer_init.as_deref().unwrap_or("zero") {
        "zero" => ObserverInit::Zero,
        "nominal" => ObserverInit::Nominal,
        other => return Err(Error::parse("observer_init", format!("expected \"zero\" or \"nominal\", got \"{other}\""))),
    };

    let wrap = |field: String| move |e: Error| Error::parse(field.clone(), e.to_string());
    let normal_edges = edge_list("network.edges", &f.network.edges, n)?;
    let normal = WeightedGraph::from_edges(n, &normal_edges).map_err(wrap("network.edges".into()))?;
    let mut graphs = vec![normal.clone()];
    for (k, m) in f.network.modes.iter().enumerate() {
        let field = format!("network.modes[{k}]");
        let g = match (&m.edges, &m.toggle) {
            (Some(es), None) => {
                let es = edge_list(&format!("{field}.edges"), es, n)?;
                WeightedGraph::from_edges(n, &es).map_err(wrap(format!("{field}.edges")))?
            }
            (None, Some(ts)) => {
                let ts = edge_list(&format!("{field}.toggle"), ts, n)?;
                let mut g = normal.clone();
                for (t, &(i, j, w)) in ts.iter().enumerate() {
                    if i == j || !(w > 0.0 && w.is_finite()) {
                        return Err(Error::parse(format!("{field}.toggle[{t}]"), "needs distinct nodes and a positive weight"));
                    }
                    g = g.toggled(i, j, w).map_err(wrap(format!("{field}.toggle[{t}]")))?;
                }
                g
            }
            _ => return Err(Error::parse(field, "give exactly one of `edges` or `toggle`")),
        };
        graphs.push(g);
    }
    let lib = TopologyLibrary::new(graphs).map_err(wrap("network".into()))?;

    let mut cluster_nodes = Vec::new();
    let mut centers = Vec::new();
    for (k, c) in f.clusters.iter().enumerate() {
        let mut nodes = node_list(&format!("clusters[{k}].nodes"), &c.nodes, n)?;
        nodes.sort_unstable();
        let center = node_index(&format!("clusters[{k}].center"), c.center, n)?;
        if nodes.binary_search(&center).is_err() {
            return Err(Error::parse(format!("clusters[{k}].center"), format!("node {} is not in the cluster", c.center)));
        }
        cluster_nodes.push(nodes);
        centers.push(center);
    }
    let clusters = ClusterPartition::new(&normal, cluster_nodes, centers).map_err(wrap("clusters".into()))?;
    let partitioned = partition(&lib, &clusters).map_err(wrap("network.modes".into()))?;

    let attack_file = f.attack.clone().unwrap_or(AttackFile {
        variant: "none".into(),
        actuators: Vec::new(),
        t_a: None,
        magnitude: None,
        zda_scale: None,
    });
    let variant = match attack_file.variant.as_str() {
        "none" => AttackVariant::None,
        "zda" => AttackVariant::Zda,
        "covert" => AttackVariant::Covert,
        other => return Err(Error::parse("attack.variant", format!("expected \"zda\", \"covert\" or \"none\", got \"{other}\""))),
    };
    let actuators = node_list("attack.actuators", &attack_file.actuators, n)?;
    if variant != AttackVariant::None && actuators.is_empty() {
        return Err(Error::parse("attack.actuators", "an attack needs at least one actuator"));
    }
    let t_a = non_negative("attack.t_a", attack_file.t_a.unwrap_or(0.0))?;
    if variant == AttackVariant::Zda && t_a != 0.0 {
        return Err(Error::parse("attack.t_a", "the zero-dynamics attack starts with its state offset at t = 0"));
    }
    let attack = AttackConfig {
        variant,
        t_a,
        magnitude: attack_file.magnitude.unwrap_or(1.0),
        zda_scale: positive("attack.zda_scale", attack_file.zda_scale.unwrap_or(1.0))?,
    };
    if !attack.magnitude.is_finite() {
        return Err(Error::parse("attack.magnitude", "must be finite"));
    }

    let plant = PlantModel::new(
        alpha,
        gamma,
        lib.clone(),
        actuators.clone(),
        node_list("monitors.positions", &f.monitors.positions, n)?,
        node_list("monitors.velocities", &f.monitors.velocities, n)?,
    )
    .map_err(wrap("monitors".into()))?;

    let mut monitors = Vec::new();
    for (k, m) in f.monitors.local.iter().enumerate() {
        let field = format!("monitors.local[{k}]");
        let node = node_index(&format!("{field}.node"), m.node, n)?;
        let cluster = clusters.cluster_of(node).expect("partition covers every node");
        let members = &clusters.clusters[cluster];
        let measured = match &m.measured {
            Some(ms) => {
                let mut ms = node_list(&format!("{field}.measured"), ms, n)?;
                if let Some(bad) = ms.iter().find(|v| members.binary_search(v).is_err()) {
                    return Err(Error::parse(format!("{field}.measured"), format!("node {} is outside the monitor's cluster", bad + 1)));
                }
                if !ms.contains(&node) {
                    ms.push(node);
                }
                ms.sort_unstable();
                ms.dedup();
                ms
            }
            None => {
                let mut ms: Vec<usize> = normal
                    .neighbors(node)
                    .into_iter()
                    .filter(|v| members.binary_search(v).is_ok())
                    .collect();
                ms.push(node);
                ms.sort_unstable();
                ms
            }
        };
        let assumed_attacked = match &m.assumed_attacked {
            Some(fa) => {
                let fa = node_list(&format!("{field}.assumed_attacked"), fa, n)?;
                if let Some(bad) = fa.iter().find(|v| members.binary_search(v).is_err()) {
                    return Err(Error::parse(format!("{field}.assumed_attacked"), format!("node {} is outside the monitor's cluster", bad + 1)));
                }
                fa
            }
            None => actuators.iter().copied().filter(|v| members.binary_search(v).is_ok()).collect(),
        };
        monitors.push(LocalMonitor {
            cluster,
            node,
            measured,
            assumed_attacked,
        });
    }

    let det = f.detection.clone().unwrap_or(DetectionFile {
        thresholds: None,
        arm_time: None,
        stop_on_global_detection: None,
        switch_preference: None,
        candidate_modes: None,
    });
    let thresholds = match det.thresholds {
        None => Thresholds::Calibrate,
        Some(ThresholdsFile::Keyword(k)) if k == "calibrate" => Thresholds::Calibrate,
        Some(ThresholdsFile::Keyword(k)) => {
            return Err(Error::parse("detection.thresholds", format!("expected \"calibrate\" or a table, got \"{k}\"")))
        }
        Some(ThresholdsFile::Fixed { global, local }) => {
            positive("detection.thresholds.global", global)?;
            if local.len() != monitors.len() {
                return Err(Error::parse(
                    "detection.thresholds.local",
                    format!("{} values for {} local monitors", local.len(), monitors.len()),
                ));
            }
            for (k, &v) in local.iter().enumerate() {
                positive(&format!("detection.thresholds.local[{k}]"), v)?;
            }
            Thresholds::Fixed { global, local }
        }
    };
    let switch_preference = match det.switch_preference.as_deref().unwrap_or("any") {
        "any" => SwitchPreference::Any,
        "bounded" => SwitchPreference::Bounded,
        "divergent" => SwitchPreference::Divergent,
        other => {
            return Err(Error::parse(
                "detection.switch_preference",
                format!("expected \"any\", \"bounded\" or \"divergent\", got \"{other}\""),
            ))
        }
    };
    let candidate_modes = match det.candidate_modes {
        None => None,
        Some(ms) => {
            let mut out = Vec::new();
            for (k, &m) in ms.iter().enumerate() {
                if m < 2 || m > lib.len() {
                    return Err(Error::parse(
                        format!("detection.candidate_modes[{k}]"),
                        format!("mode {m} is not a switching mode (library has modes 1..={}, 1 is normal)", lib.len()),
                    ));
                }
                out.push(m - 1);
            }
            Some(out)
        }
    };

    let (initial_positions, initial_velocities) = match &f.initial {
        None => (None, None),
        Some(init) => {
            for (field, v) in [("initial.positions", &init.positions), ("initial.velocities", &init.velocities)] {
                if let Some(v) = v {
                    if v.len() != n {
                        return Err(Error::parse(field, format!("{} values for {n} nodes", v.len())));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::parse(field, "values must be finite"));
                    }
                }
            }
            (init.positions.clone(), init.velocities.clone())
        }
    };

    let privacy = privacy_check(&plant)?;
    let mut local = Vec::new();
    for m in &monitors {
        local.push(local_detectability_check(
            &plant,
            &partitioned,
            m.cluster,
            m.node,
            &m.measured,
            &m.assumed_attacked,
        )?);
    }

    Ok(Scenario {
        name: f.name.unwrap_or_else(|| origin.to_string()),
        seed: f.seed.unwrap_or(0),
        plant,
        clusters,
        partitioned,
        monitors,
        attack,
        horizon,
        dt,
        eta,
        observer_init,
        record_every,
        thresholds,
        arm_time: non_negative("detection.arm_time", det.arm_time.unwrap_or(CALIBRATION_TRANSIENT))?,
        stop_on_global_detection: det.stop_on_global_detection.unwrap_or(false),
        switch_preference,
        candidate_modes,
        initial_positions,
        initial_velocities,
        checks: LoadChecks {
            privacy,
            local,
            forced: false,
        },
    })
}

// ---------------------------------------------------------------------------
// Report types (1-based indices)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDetection {
    pub cluster: usize,
    pub node: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub time: f64,
    pub mode: usize,
    /// Predicted residual behaviour for a zero-dynamics attack.
    pub predicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub name: String,
    pub threshold: f64,
    /// Largest norm on `[arm_time, switch)`, or to the end without a switch.
    pub max_pre_switch: f64,
    pub max_post_switch: Option<f64>,
    pub first_crossing: Option<f64>,
    pub final_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub mode: usize,
    pub is_switch: bool,
    pub cond_image_kernel: bool,
    pub cond_distinct_eigs: bool,
    pub cond_eigvec_rows: bool,
    pub coverage_ok: bool,
    pub all_pass: bool,
    pub min_eigengap: f64,
    pub min_row_diff: Option<f64>,
    pub row_witness: Option<(usize, usize, usize)>,
    pub kernel_witness: Option<Vec<f64>>,
    /// Nodes of each connected component of the switched links.
    pub components: Vec<Vec<usize>>,
    /// Behaviour predicted from the zero-dynamics support, when known.
    pub predicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalCheckReport {
    pub cluster: usize,
    pub monitor: usize,
    pub measured: Vec<usize>,
    pub assumed_attacked: Vec<usize>,
    pub monitor_degree: usize,
    pub required_degree: usize,
    pub cond_degree: bool,
    pub cond_rank: bool,
    pub cond_pencil: bool,
    pub pencil_zeros: Vec<Vec<(f64, f64)>>,
    pub pencil_note: Option<String>,
    pub all_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralDesignReport {
    pub eta: f64,
    pub shift: f64,
    pub abscissa_per_mode: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UioDesignReport {
    pub cluster: usize,
    pub node: usize,
    pub measured: Vec<usize>,
    pub abscissa_per_mode: Vec<f64>,
    pub dwell_time: f64,
    pub algebra_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZdaReport {
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub direction_residual: f64,
    pub support: Vec<usize>,
    pub x_tilde0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub scenario: String,
    pub seed: u64,
    pub attack: AttackConfig,
    pub actuators: Vec<usize>,
    /// `completed` or `no-safe-mode`.
    pub status: String,
    pub local_detection: Option<LocalDetection>,
    pub switch_event: Option<SwitchEvent>,
    pub global_detection: Option<f64>,
    pub diverged: bool,
    pub end_time: f64,
    pub thresholds_calibrated: bool,
    pub residuals: Vec<ResidualSummary>,
    pub safe_modes: Vec<usize>,
    pub verdicts: Vec<VerdictReport>,
    pub privacy: bool,
    pub local_checks: Vec<LocalCheckReport>,
    pub checks_forced: bool,
    pub central_observer: CentralDesignReport,
    pub local_observers: Vec<UioDesignReport>,
    /// Largest UIO dwell time; switches are held back until it has elapsed.
    pub min_dwell_time: f64,
    pub zda: Option<ZdaReport>,
    pub notes: Vec<String>,
}

impl DetectionReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("report serialization: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse("report.json", e.to_string()))
    }
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

fn verdict_report(v: &SafeSwitchVerdict, support: Option<&BTreeSet<usize>>) -> VerdictReport {
    VerdictReport {
        mode: v.mode + 1,
        is_switch: v.is_switch,
        cond_image_kernel: v.cond_image_kernel,
        cond_distinct_eigs: v.cond_distinct_eigs,
        cond_eigvec_rows: v.cond_eigvec_rows,
        coverage_ok: v.coverage_ok,
        all_pass: v.all_pass,
        min_eigengap: v.min_eigengap,
        min_row_diff: v.min_row_diff.is_finite().then_some(v.min_row_diff),
        row_witness: v.row_witness.map(|(i, j, c)| (i + 1, j + 1, c + 1)),
        kernel_witness: v.kernel_witness.as_ref().map(|w| w.iter().copied().collect()),
        components: v.components.components.iter().map(|c| one_based(c)).collect(),
        predicted: support.map(|s| boundedness_name(classify_switch_boundedness(s, &v.components)).to_string()),
    }
}

fn boundedness_name(b: SwitchBoundedness) -> &'static str {
    match b {
        SwitchBoundedness::Bounded => "bounded",
        SwitchBoundedness::Divergent => "divergent",
    }
}

fn local_check_report(v: &LocalDetectabilityVerdict, m: &LocalMonitor) -> LocalCheckReport {
    LocalCheckReport {
        cluster: v.cluster + 1,
        monitor: v.monitor + 1,
        measured: one_based(&m.measured),
        assumed_attacked: one_based(&m.assumed_attacked),
        monitor_degree: v.monitor_degree,
        required_degree: v.required_degree,
        cond_degree: v.cond_degree,
        cond_rank: v.cond_rank,
        cond_pencil: v.cond_pencil,
        pencil_zeros: v.pencil_zeros.clone(),
        pencil_note: v.pencil_note.clone(),
        all_pass: v.all_pass,
    }
}

/// Static analysis of a scenario: privacy, local detectability and switch verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub scenario: String,
    pub privacy: bool,
    pub local_checks: Vec<LocalCheckReport>,
    pub verdicts: Vec<VerdictReport>,
    pub safe_modes: Vec<usize>,
    pub all_pass: bool,
}

pub fn check_scenario(s: &Scenario) -> Result<CheckReport> {
    let verdicts = safe_switch_verdicts(&s.plant)?;
    let safe = enumerate_safe_modes(&s.plant)?;
    Ok(CheckReport {
        scenario: s.name.clone(),
        privacy: s.checks.privacy,
        local_checks: s
            .checks
            .local
            .iter()
            .zip(&s.monitors)
            .map(|(v, m)| local_check_report(v, m))
            .collect(),
        verdicts: verdicts.iter().map(|v| verdict_report(v, None)).collect(),
        safe_modes: one_based(&safe),
        all_pass: s.checks.all_pass(),
    })
}

// ---------------------------------------------------------------------------
// Running

/// Column naming needed to write the result files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLayout {
    pub n: usize,
    pub output_labels: Vec<String>,
    pub actuators: Vec<usize>,
    /// `(cluster, node, local output labels)` per local observer, 1-based.
    pub locals: Vec<(usize, usize, Vec<String>)>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: SimTrace,
    pub residuals: ResidualTrace,
    pub report: DetectionReport,
    pub layout: RunLayout,
}

/// Everything the joint integration needs, designed once per scenario.
struct Rig {
    mats: Vec<Matrix>,
    b: Matrix,
    c: Matrix,
    central: CentralObserver,
    uios: Vec<UioRealization>,
    /// `K_q + K̄_q` per observer and mode.
    gains: Vec<Vec<Matrix>>,
    n2: usize,
}

struct Offsets {
    replica: usize,
    xhat: usize,
    z: Vec<usize>,
    total: usize,
}

impl Rig {
    fn offsets(&self, rd: usize) -> Offsets {
        let replica = self.n2;
        let xhat = replica + rd;
        let mut z = Vec::new();
        let mut at = xhat + self.n2;
        for u in &self.uios {
            z.push(at);
            at += u.state_dim();
        }
        Offsets { replica, xhat, z, total: at }
    }

    fn deriv(&self, q: usize, t: f64, s: &Vector, attack: &AttackDriver, o: &Offsets) -> Vector {
        let n2 = self.n2;
        let rd = o.xhat - o.replica;
        let x = s.rows(0, n2).into_owned();
        let mut d = Vector::zeros(o.total);
        let ua = attack.ua(t);
        d.rows_mut(0, n2).copy_from(&(&self.mats[q] * &x + &self.b * &ua));
        let rep = s.rows(o.replica, rd).into_owned();
        if rd > 0 {
            d.rows_mut(o.replica, rd).copy_from(&attack.replica_deriv(t, &rep));
        }
        let y = &self.c * &x - attack.us(t, &rep);
        let xhat = s.rows(o.xhat, n2).into_owned();
        d.rows_mut(o.xhat, n2).copy_from(&self.central.deriv(&xhat, &y));
        for (j, u) in self.uios.iter().enumerate() {
            let k = u.state_dim();
            let z = s.rows(o.z[j], k).into_owned();
            let yl = u.local_output(&x);
            let dz = &u.f_per_mode[q] * &z + &self.gains[j][q] * &yl;
            d.rows_mut(o.z[j], k).copy_from(&dz);
        }
        d
    }

    /// `(y, u_s, r0, local residuals)` at state `s`.
    fn outputs(&self, t: f64, s: &Vector, attack: &AttackDriver, o: &Offsets) -> (Vector, Vector, Vector, Vec<Vector>) {
        let n2 = self.n2;
        let x = s.rows(0, n2).into_owned();
        let rep = s.rows(o.replica, o.xhat - o.replica).into_owned();
        let us = attack.us(t, &rep);
        let y = &self.c * &x - &us;
        let xhat = s.rows(o.xhat, n2).into_owned();
        let r0 = self.central.residual(&xhat, &y);
        let rl = self
            .uios
            .iter()
            .enumerate()
            .map(|(j, u)| {
                let z = s.rows(o.z[j], u.state_dim()).into_owned();
                u.residual(&z, &u.local_output(&x))
            })
            .collect();
        (y, us, r0, rl)
    }
}

fn build_rig(s: &Scenario) -> Result<(Rig, CentralDesignReport, Vec<UioDesignReport>)> {
    let p = &s.plant;
    let gain = design_central_gain(p, s.eta)?;
    let central = CentralObserver::new(p, gain.h.clone())?;
    let mut uios = Vec::new();
    let mut reports = Vec::new();
    for m in &s.monitors {
        let u = design_uio(&s.partitioned, m.cluster, &m.measured, p.alpha, p.gamma, s.eta)?;
        reports.push(UioDesignReport {
            cluster: m.cluster + 1,
            node: m.node + 1,
            measured: one_based(&m.measured),
            abscissa_per_mode: u.abscissa_per_mode.clone(),
            dwell_time: u.dwell_time,
            algebra_error: u.algebra_error(&s.partitioned, p.alpha, p.gamma),
        });
        uios.push(u);
    }
    let gains = uios
        .iter()
        .map(|u| {
            u.k_per_mode
                .iter()
                .zip(&u.kbar_per_mode)
                .map(|(k, kb)| k + kb)
                .collect()
        })
        .collect();
    let mats = (0..p.lib.len()).map(|q| p.a(q)).collect::<Result<Vec<_>>>()?;
    let rig = Rig {
        mats,
        b: p.b(),
        c: p.c(),
        central,
        uios,
        gains,
        n2: p.state_dim(),
    };
    Ok((
        rig,
        CentralDesignReport {
            eta: gain.eta,
            shift: gain.shift,
            abscissa_per_mode: gain.abscissa_per_mode,
        },
        reports,
    ))
}

/// Attack-free initial state: given values, or seeded uniform positions in [-1, 1] and zero velocities.
pub fn nominal_initial_state(s: &Scenario) -> Vector {
    let n = s.plant.n();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut x = Vector::zeros(2 * n);
    for i in 0..n {
        x[i] = rng.random_range(-1.0..=1.0);
    }
    if let Some(pos) = &s.initial_positions {
        for i in 0..n {
            x[i] = pos[i];
        }
    }
    if let Some(vel) = &s.initial_velocities {
        for i in 0..n {
            x[n + i] = vel[i];
        }
    }
    x
}

/// The attack driver of a scenario, with the zero-dynamics direction scaled so that `max |x̃0| = zda_scale`.
pub fn attack_driver(s: &Scenario) -> Result<AttackDriver> {
    let p = &s.plant;
    match s.attack.variant {
        AttackVariant::None => Ok(AttackDriver::none(p)),
        AttackVariant::Covert => Ok(AttackDriver::Covert(CovertAttacker::new(p, s.attack.magnitude, s.attack.t_a)?)),
        AttackVariant::Zda => {
            let z = synth_zda(p)?.ok_or_else(|| {
                Error::DesignInfeasible(format!(
                    "no zero-dynamics attack exists for actuators {:?}",
                    one_based(&p.attacked_actuators)
                ))
            })?;
            let peak = z.x_tilde0().amax();
            if peak <= 0.0 {
                return Err(Error::DesignInfeasible("zero direction has no state component".into()));
            }
            Ok(AttackDriver::Zda(z.rescaled(s.attack.zda_scale / peak)))
        }
    }
}

/// Plant initial state: the nominal state plus the attack's state offset.
pub fn plant_initial_state(s: &Scenario, attack: &AttackDriver) -> Vector {
    let mut x = nominal_initial_state(s);
    if let AttackDriver::Zda(z) = attack {
        x += z.x_tilde0();
    }
    x
}

/// Per-step residual norms and detection bookkeeping.
struct Monitor {
    thresholds: Vec<f64>,
    pre: Vec<f64>,
    post: Vec<Option<f64>>,
    first: Vec<Option<f64>>,
    last: Vec<f64>,
}

impl Monitor {
    fn new(thresholds: Vec<f64>) -> Self {
        let k = thresholds.len();
        Monitor {
            thresholds,
            pre: vec![0.0; k],
            post: vec![None; k],
            first: vec![None; k],
            last: vec![0.0; k],
        }
    }
}

struct Loop<'a> {
    s: &'a Scenario,
    rig: &'a Rig,
    attack: &'a AttackDriver,
    /// `None` disables detection and switching (calibration).
    thresholds: Option<Vec<f64>>,
    safe: Vec<usize>,
    dwell: f64,
    horizon: f64,
}

struct LoopResult {
    trace: SimTrace,
    residuals: ResidualTrace,
    /// Largest norm after the calibration transient, per residual (global first).
    calib_peaks: Vec<f64>,
    monitor: Monitor,
    local_detection: Option<LocalDetection>,
    switch_event: Option<(f64, usize)>,
    global_detection: Option<f64>,
    no_safe_mode: bool,
    end_time: f64,
}

impl Loop<'_> {
    fn run(&self) -> Result<LoopResult> {
        let s = self.s;
        let rig = self.rig;
        let attack = self.attack;
        let n2 = rig.n2;
        let o = rig.offsets(attack.replica_dim());
        let grid = time_grid(self.horizon, s.dt)?;
        let dt = s.dt;

        let nominal = nominal_initial_state(s);
        let x0 = plant_initial_state(s, attack);
        let xhat0 = match s.observer_init {
            ObserverInit::Zero => Vector::zeros(n2),
            ObserverInit::Nominal => nominal.clone(),
        };
        let mut st = Vector::zeros(o.total);
        st.rows_mut(0, n2).copy_from(&x0);
        st.rows_mut(o.xhat, n2).copy_from(&xhat0);
        for (j, u) in rig.uios.iter().enumerate() {
            let y0 = u.local_output(&x0);
            let z0 = u.initial_state(&u.local_state(&xhat0), &y0);
            st.rows_mut(o.z[j], u.state_dim()).copy_from(&z0);
        }

        let k_res = 1 + rig.uios.len();
        let mut mon = Monitor::new(self.thresholds.clone().unwrap_or_else(|| vec![f64::INFINITY; k_res]));
        let mut calib_peaks = vec![0.0; k_res];
        let mut trace = SimTrace::default();
        let mut res = ResidualTrace {
            times: Vec::new(),
            r0: Vec::new(),
            r_local: vec![Vec::new(); rig.uios.len()],
        };
        let mut local_detection = None;
        let mut switch_event: Option<(f64, usize)> = None;
        let mut pending: Option<(usize, usize)> = None;
        let mut global_detection = None;
        let mut no_safe_mode = false;
        let mut q = 0usize;
        let mut end_time;

        let mut k = 0usize;
        loop {
            let t = grid[k];
            end_time = t;
            if let Some((step, mode)) = pending {
                if k >= step {
                    q = mode;
                    switch_event = Some((t, mode));
                    pending = None;
                }
            }
            let (y, us, r0, rl) = rig.outputs(t, &st, attack, &o);
            let norms: Vec<f64> = std::iter::once(r0.amax()).chain(rl.iter().map(|r| r.amax())).collect();
            let last = k + 1 == grid.len();
            let diverged = !st.iter().all(|v| v.is_finite()) || st.rows(0, n2).amax() > OVERFLOW_GUARD;
            let stop_now = last || diverged;

            if k % s.record_every == 0 || stop_now {
                trace.times.push(t);
                trace.states.push(st.rows(0, n2).into_owned());
                trace.inputs_ua.push(attack.ua(t));
                trace.inputs_us.push(us);
                trace.outputs.push(y);
                trace.modes.push(q);
                res.times.push(t);
                res.r0.push(r0);
                for (j, r) in rl.into_iter().enumerate() {
                    res.r_local[j].push(r);
                }
            }
            for (j, &r) in norms.iter().enumerate() {
                if t > CALIBRATION_TRANSIENT {
                    calib_peaks[j] = f64::max(calib_peaks[j], r);
                }
                mon.last[j] = r;
                if t >= s.arm_time && r.is_finite() {
                    if switch_event.is_some() {
                        mon.post[j] = Some(mon.post[j].unwrap_or(0.0).max(r));
                    } else {
                        mon.pre[j] = mon.pre[j].max(r);
                    }
                }
            }

            if self.thresholds.is_some() && t >= s.arm_time && !diverged {
                for j in 0..k_res {
                    if mon.first[j].is_none() && norms[j] > mon.thresholds[j] {
                        mon.first[j] = Some(t);
                    }
                }
                if local_detection.is_none() {
                    if let Some(j) = (1..k_res).find(|&j| norms[j] > mon.thresholds[j]) {
                        let m = &s.monitors[j - 1];
                        local_detection = Some(LocalDetection {
                            cluster: m.cluster + 1,
                            node: m.node + 1,
                            time: t,
                        });
                        match self.safe.first() {
                            Some(&mode) => {
                                let at = t.max(self.dwell);
                                let step = ((at / dt) - 1e-9).ceil().max((k + 1) as f64) as usize;
                                pending = Some((step, mode));
                            }
                            None => no_safe_mode = true,
                        }
                    }
                }
                if global_detection.is_none() && norms[0] > mon.thresholds[0] {
                    global_detection = Some(t);
                    if s.stop_on_global_detection {
                        break;
                    }
                }
            }
            if stop_now {
                trace.diverged = diverged;
                break;
            }
            let qq = q;
            st = rk4_step(|tt, x| rig.deriv(qq, tt, x, attack, &o), t, &st, dt);
            k += 1;
        }
        Ok(LoopResult {
            trace,
            residuals: res,
            calib_peaks,
            monitor: mon,
            local_detection,
            switch_event,
            global_detection,
            no_safe_mode,
            end_time,
        })
    }
}

fn residual_names(s: &Scenario) -> Vec<String> {
    std::iter::once("r0".to_string())
        .chain(s.monitors.iter().map(|m| format!("r{}_{}", m.cluster + 1, m.node + 1)))
        .collect()
}

/// Thresholds for every residual (global first), calibrated on an attack-free run when requested.
pub fn scenario_thresholds(s: &Scenario) -> Result<Vec<f64>> {
    let (rig, _, _) = build_rig(s)?;
    thresholds_with(s, &rig)
}

fn thresholds_with(s: &Scenario, rig: &Rig) -> Result<Vec<f64>> {
    match &s.thresholds {
        Thresholds::Fixed { global, local } => Ok(std::iter::once(*global).chain(local.iter().copied()).collect()),
        Thresholds::Calibrate => {
            let free = AttackDriver::none(&s.plant);
            let run = Loop {
                s,
                rig,
                attack: &free,
                thresholds: None,
                safe: Vec::new(),
                dwell: 0.0,
                horizon: s.horizon.min(CALIBRATION_HORIZON),
            }
            .run()?;
            Ok(run.calib_peaks.iter().map(|&peak| 2.0 * peak + THRESHOLD_FLOOR).collect())
        }
    }
}

/// Safe modes in selection order, after the scenario's candidate and preference filters.
pub fn switch_candidates(s: &Scenario, attack: &AttackDriver) -> Result<Vec<usize>> {
    let mut safe = enumerate_safe_modes(&s.plant)?;
    if let Some(allowed) = &s.candidate_modes {
        safe.retain(|m| allowed.contains(m));
    }
    if let (SwitchPreference::Bounded | SwitchPreference::Divergent, AttackDriver::Zda(z)) = (s.switch_preference, attack) {
        let support = attack_support(&z.x_tilde0(), SUPPORT_TOL);
        let want = if s.switch_preference == SwitchPreference::Bounded {
            SwitchBoundedness::Bounded
        } else {
            SwitchBoundedness::Divergent
        };
        let mut kept = Vec::new();
        for &m in &safe {
            let dd = components_of_delta(&delta_laplacian(&s.plant.lib, m)?)?;
            if classify_switch_boundedness(&support, &dd) == want {
                kept.push(m);
            }
        }
        safe = kept;
    }
    Ok(safe)
}

/// Runs the detect, switch, detect loop on the scenario.
pub fn run_scenario(s: &Scenario) -> Result<RunOutput> {
    let attack = attack_driver(s)?;
    run_with_attack(s, &attack)
}

/// As [`run_scenario`] with an explicit attack driver.
pub fn run_with_attack(s: &Scenario, attack: &AttackDriver) -> Result<RunOutput> {
    let p = &s.plant;
    let (rig, central_report, uio_reports) = build_rig(s)?;
    let thresholds = thresholds_with(s, &rig)?;
    let safe = switch_candidates(s, attack)?;
    let dwell = rig.uios.iter().map(|u| u.dwell_time).fold(0.0, f64::max);
    let out = Loop {
        s,
        rig: &rig,
        attack,
        thresholds: Some(thresholds.clone()),
        safe: safe.clone(),
        dwell,
        horizon: s.horizon,
    }
    .run()?;

    let support = match attack {
        AttackDriver::Zda(z) => Some(attack_support(&z.x_tilde0(), SUPPORT_TOL)),
        _ => None,
    };
    let verdicts = safe_switch_verdicts(p)?;
    let names = residual_names(s);
    let residuals = (0..names.len())
        .map(|j| ResidualSummary {
            name: names[j].clone(),
            threshold: out.monitor.thresholds[j],
            max_pre_switch: out.monitor.pre[j],
            max_post_switch: out.monitor.post[j],
            first_crossing: out.monitor.first[j],
            final_norm: out.monitor.last[j],
        })
        .collect();
    let zda = match attack {
        AttackDriver::Zda(z) => Some(ZdaReport {
            lambda_re: z.lambda0.re,
            lambda_im: z.lambda0.im,
            direction_residual: z.residual,
            support: support.iter().flatten().map(|i| i + 1).collect(),
            x_tilde0: z.x_tilde0().iter().copied().collect(),
        }),
        _ => None,
    };
    let switch_event = out.switch_event.map(|(time, mode)| {
        let predicted = support
            .as_ref()
            .and_then(|sup| verdicts.iter().find(|v| v.mode == mode).map(|v| (sup, v)))
            .map(|(sup, v)| boundedness_name(classify_switch_boundedness(sup, &v.components)).to_string());
        SwitchEvent {
            time,
            mode: mode + 1,
            predicted,
        }
    });
    let mut notes = vec![
        "predicted behaviour treats the attack-affected subspace as the states of the nodes where the zero direction is non-zero".to_string(),
    ];
    if out.no_safe_mode {
        notes.push("local detection found no mode satisfying the safe-switch conditions; topology left unchanged".to_string());
    }
    let report = DetectionReport {
        scenario: s.name.clone(),
        seed: s.seed,
        attack: s.attack.clone(),
        actuators: one_based(&p.attacked_actuators),
        status: if out.no_safe_mode { "no-safe-mode" } else { "completed" }.to_string(),
        local_detection: out.local_detection,
        switch_event,
        global_detection: out.global_detection,
        diverged: out.trace.diverged,
        end_time: out.end_time,
        thresholds_calibrated: s.thresholds == Thresholds::Calibrate,
        residuals,
        safe_modes: one_based(&safe),
        verdicts: verdicts.iter().map(|v| verdict_report(v, support.as_ref())).collect(),
        privacy: s.checks.privacy,
        local_checks: s
            .checks
            .local
            .iter()
            .zip(&s.monitors)
            .map(|(v, m)| local_check_report(v, m))
            .collect(),
        checks_forced: s.checks.forced,
        central_observer: central_report,
        local_observers: uio_reports,
        min_dwell_time: dwell,
        zda,
        notes,
    };
    let layout = RunLayout {
        n: p.n(),
        output_labels: p.output_labels(),
        actuators: one_based(&p.attacked_actuators),
        locals: rig
            .uios
            .iter()
            .zip(&s.monitors)
            .map(|(u, m)| {
                let labels = u
                    .measured
                    .iter()
                    .map(|v| format!("x{}", v + 1))
                    .chain(u.measured.iter().map(|v| format!("v{}", v + 1)))
                    .collect();
                (m.cluster + 1, m.node + 1, labels)
            })
            .collect(),
    };
    Ok(RunOutput {
        trace: out.trace,
        residuals: out.residuals,
        report,
        layout,
    })
}

// ---------------------------------------------------------------------------
// Emission

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn push_all(rec: &mut Vec<String>, v: &Vector) {
    rec.extend(v.iter().map(|&x| fmt_f64(x)));
}

/// Header of `trace.csv`.
pub fn trace_header(layout: &RunLayout) -> Vec<String> {
    let n = layout.n;
    let mut h = vec!["t".to_string(), "mode".to_string()];
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h.extend((1..=n).map(|i| format!("v_{i}")));
    h.extend(layout.output_labels.iter().map(|l| format!("y_{l}")));
    h.extend(layout.actuators.iter().map(|i| format!("ua_{i}")));
    h.extend(layout.output_labels.iter().map(|l| format!("us_{l}")));
    h
}

/// Header of `residuals.csv`.
pub fn residual_header(layout: &RunLayout) -> Vec<String> {
    let mut h = vec!["t".to_string(), "mode".to_string()];
    h.extend(layout.output_labels.iter().map(|l| format!("r0_{l}")));
    h.push("r0_norm".into());
    for (c, node, labels) in &layout.locals {
        h.extend(labels.iter().map(|l| format!("r{c}_{node}_{l}")));
        h.push(format!("r{c}_{node}_norm"));
    }
    h
}

/// Header of `plotdata.csv`: time, states, residual norms, active mode.
pub fn plot_header(layout: &RunLayout) -> Vec<String> {
    let n = layout.n;
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h.extend((1..=n).map(|i| format!("v_{i}")));
    h.push("r0_norm".into());
    h.extend(layout.locals.iter().map(|(c, node, _)| format!("r{c}_{node}_norm")));
    h.push("mode".into());
    h
}

/// Writes `trace.csv`, `residuals.csv`, `report.json` and `plotdata.csv` into `dir`.
pub fn emit_results(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tr = &out.trace;
    let rs = &out.residuals;
    let n = out.layout.n;

    let path = dir.join("trace.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(trace_header(&out.layout)).map_err(csv_err(&path))?;
    for k in 0..tr.len() {
        let mut rec = vec![fmt_f64(tr.times[k]), (tr.modes[k] + 1).to_string()];
        push_all(&mut rec, &tr.states[k]);
        push_all(&mut rec, &tr.outputs[k]);
        push_all(&mut rec, &tr.inputs_ua[k]);
        push_all(&mut rec, &tr.inputs_us[k]);
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("residuals.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(residual_header(&out.layout)).map_err(csv_err(&path))?;
    for k in 0..rs.times.len() {
        let mode = tr.modes.get(k).map(|m| m + 1).unwrap_or(1);
        let mut rec = vec![fmt_f64(rs.times[k]), mode.to_string()];
        push_all(&mut rec, &rs.r0[k]);
        rec.push(fmt_f64(rs.r0[k].amax()));
        for series in &rs.r_local {
            push_all(&mut rec, &series[k]);
            rec.push(fmt_f64(series[k].amax()));
        }
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("plotdata.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(plot_header(&out.layout)).map_err(csv_err(&path))?;
    for k in 0..tr.len().min(rs.times.len()) {
        let mut rec = vec![fmt_f64(tr.times[k])];
        push_all(&mut rec, &tr.states[k].rows(0, 2 * n).into_owned());
        rec.push(fmt_f64(rs.r0[k].amax()));
        rec.extend(rs.r_local.iter().map(|s| fmt_f64(s[k].amax())));
        rec.push((tr.modes[k] + 1).to_string());
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("report.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(out.report.to_json()?.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(&path, e))?;
    Ok(())
}
