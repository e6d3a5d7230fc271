//! Scenario documents: flat `key = value` text, `#` comments, list values
//! comma separated, positions written as `x,y`.
//!
//! ```text
//! layout = generated        # or a path to an ASCII layout, relative to this file
//! layout_width = 81
//! layout_height = 80
//! n_robots = 10
//! n_tasks = 10
//! gamma = 15
//! alpha = 0.05
//! robot_starts = 1,1, 5,1
//! ```

use std::path::Path;

use thiserror::Error;

use crate::engine::{LayoutSource, Placement, Scenario};
use crate::gridworld::Position;

#[derive(Debug, Error, PartialEq)]
#[error("scenario line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

const KEYS: &[&str] = &[
    "layout",
    "layout_width",
    "layout_height",
    "n_robots",
    "n_tasks",
    "gamma",
    "alpha",
    "dynamic_scale",
    "sensor_radius",
    "population",
    "generations",
    "mutation_prob",
    "parent_fraction",
    "eta",
    "step_cap",
    "seed",
    "robot_starts",
    "task_positions",
];

/// Parses a scenario document. Relative layout paths resolve against
/// `base_dir`.
pub fn parse_scenario(text: &str, base_dir: Option<&Path>) -> Result<Scenario, ConfigError> {
    let mut sc = Scenario::default();
    let mut layout: Option<(usize, String)> = None;
    let (mut width, mut height) = (81usize, 80usize);
    let mut seen = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ConfigError { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(err(format!("unknown key {key:?}")));
        }
        if seen.contains(&key) {
            return Err(err(format!("duplicate key {key:?}")));
        }
        seen.push(key);

        fn num<T: std::str::FromStr>(
            value: &str,
            key: &str,
            line: usize,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError {
                line,
                message: format!("{key}: cannot parse {value:?}"),
            })
        }

        match key {
            "layout" => layout = Some((line, value.to_string())),
            "layout_width" => width = num(value, key, line)?,
            "layout_height" => height = num(value, key, line)?,
            "n_robots" => sc.n_robots = num(value, key, line)?,
            "n_tasks" => sc.n_tasks = num(value, key, line)?,
            "gamma" => sc.potential.excitation = num(value, key, line)?,
            "alpha" => sc.potential.relaxation = num(value, key, line)?,
            "dynamic_scale" => sc.potential.dynamic_scale = num(value, key, line)?,
            "sensor_radius" => sc.sensor.radius = num(value, key, line)?,
            "population" => sc.ga.population_size = num(value, key, line)?,
            "generations" => sc.ga.max_generations = num(value, key, line)?,
            "mutation_prob" => sc.ga.mutation_probability = num(value, key, line)?,
            "parent_fraction" => sc.ga.parent_fraction = num(value, key, line)?,
            "eta" => sc.learning_rate = num(value, key, line)?,
            "step_cap" => sc.step_cap = Some(num(value, key, line)?),
            "seed" => sc.seed = num(value, key, line)?,
            "robot_starts" => sc.robot_starts = parse_placement(value).map_err(err)?,
            "task_positions" => sc.task_positions = parse_placement(value).map_err(err)?,
            _ => unreachable!("key list checked above"),
        }
    }

    sc.layout = match layout {
        None => LayoutSource::Generated { width, height },
        Some((_, v)) if v == "generated" => LayoutSource::Generated { width, height },
        Some((line, v)) => {
            if v.is_empty() {
                return Err(ConfigError {
                    line,
                    message: "layout path is empty".into(),
                });
            }
            let path = Path::new(&v);
            LayoutSource::File(match base_dir {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path.to_path_buf(),
            })
        }
    };
    Ok(sc)
}

fn parse_placement(value: &str) -> Result<Placement, String> {
    if value == "random" {
        return Ok(Placement::Random);
    }
    let cleaned: String = value.chars().filter(|c| !matches!(c, '(' | ')')).collect();
    let numbers = cleaned
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<i32>()
                .map_err(|_| format!("bad coordinate {:?}", s.trim()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if numbers.len() % 2 != 0 {
        return Err("positions need an even number of coordinates".into());
    }
    Ok(Placement::Explicit(
        numbers
            .chunks(2)
            .map(|c| Position::new(c[0], c[1]))
            .collect(),
    ))
}

fn format_placement(p: &Placement) -> String {
    match p {
        Placement::Random => "random".into(),
        Placement::Explicit(v) => v
            .iter()
            .map(|p| format!("{},{}", p.x, p.y))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

/// Writes a scenario back out in document form. Only generated and file
/// layouts can be expressed.
pub fn format_scenario(sc: &Scenario) -> Option<String> {
    let mut out = String::new();
    match &sc.layout {
        LayoutSource::Generated { width, height } => out.push_str(&format!(
            "layout = generated\nlayout_width = {width}\nlayout_height = {height}\n"
        )),
        LayoutSource::File(path) => out.push_str(&format!("layout = {}\n", path.display())),
        _ => return None,
    }
    out.push_str(&format!(
        "n_robots = {}\nn_tasks = {}\n",
        sc.n_robots, sc.n_tasks
    ));
    out.push_str(&format!(
        "gamma = {}\nalpha = {}\ndynamic_scale = {}\nsensor_radius = {}\n",
        sc.potential.excitation,
        sc.potential.relaxation,
        sc.potential.dynamic_scale,
        sc.sensor.radius
    ));
    out.push_str(&format!(
        "population = {}\ngenerations = {}\nmutation_prob = {}\nparent_fraction = {}\neta = {}\n",
        sc.ga.population_size,
        sc.ga.max_generations,
        sc.ga.mutation_probability,
        sc.ga.parent_fraction,
        sc.learning_rate
    ));
    if let Some(cap) = sc.step_cap {
        out.push_str(&format!("step_cap = {cap}\n"));
    }
    out.push_str(&format!("seed = {}\n", sc.seed));
    out.push_str(&format!(
        "robot_starts = {}\n",
        format_placement(&sc.robot_starts)
    ));
    out.push_str(&format!(
        "task_positions = {}\n",
        format_placement(&sc.task_positions)
    ));
    Some(out)
}
