//! JSON model files: a measurement, a channel, an optional initial state and
//! an optional one-parameter family.
//!
//! Complex numbers are `[re, im]` pairs and matrices are arrays of rows.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{covariance_matrix, fisher, fisher_from_parts, AsymptoticReport, FisherOptions, FisherReport};
use crate::error::{Error, Result};
use crate::instrument::{build_instrument, Instrument, Measurement, Outcome};
use crate::linop::{require_cptp, CMatrix, DensityMatrix, Operator, Superoperator, CPTP_TOL};
use crate::thermometer::{thermal_channel, weak_measurement, ThermometerParams};

pub type WireMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    pub value: f64,
    pub kraus: Vec<WireMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub kraus: Vec<WireMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Rule {
    /// Rebuild the thermometer from `base` with the named field replaced.
    Thermometer { base: ThermometerParams },
    /// One model file per grid value, resolved relative to the model file.
    ExternalFilePerValue { files: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parametrization {
    pub name: String,
    pub values: Vec<f64>,
    #[serde(flatten)]
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dimension: usize,
    pub measurement: Vec<OutcomeSpec>,
    pub channel: ChannelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<WireMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametrization: Option<Parametrization>,
}

pub fn matrix_from_wire(m: &WireMatrix, d: usize, what: &str) -> Result<CMatrix> {
    if m.len() != d || m.iter().any(|row| row.len() != d) {
        return Err(Error::Parse(format!("{what}: expected a {d}x{d} matrix")));
    }
    Ok(CMatrix::from_row_iterator(
        d,
        d,
        m.iter().flatten().map(|[re, im]| num_complex::Complex64::new(*re, *im)),
    ))
}

pub fn matrix_to_wire(m: &CMatrix) -> WireMatrix {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn operators(list: &[WireMatrix], d: usize, what: &str) -> Result<Vec<Operator>> {
    list.iter()
        .enumerate()
        .map(|(i, m)| Operator::new(matrix_from_wire(m, d, &format!("{what}[{i}]"))?))
        .collect()
}

/// A parsed and validated model.
#[derive(Debug, Clone)]
pub struct Model {
    pub measurement: Measurement,
    pub channel: Superoperator,
    pub instrument: Instrument,
    pub initial_state: Option<DensityMatrix>,
}

impl Model {
    /// The given initial state, or the fixed point of the average channel.
    pub fn initial_or_stationary(&self) -> Result<DensityMatrix> {
        match &self.initial_state {
            Some(r) => Ok(r.clone()),
            None => Ok(self.instrument.spectral().fixed_point()?.clone()),
        }
    }
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn measurement(&self) -> Result<Measurement> {
        self.measurement_with(crate::instrument::POVM_TOL)
    }

    pub fn measurement_with(&self, tol: f64) -> Result<Measurement> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::Parse("dimension must be positive".into()));
        }
        let outcomes = self
            .measurement
            .iter()
            .enumerate()
            .map(|(i, o)| Ok(Outcome::new(o.value, operators(&o.kraus, d, &format!("measurement[{i}].kraus"))?)))
            .collect::<Result<Vec<_>>>()?;
        Measurement::with_tolerance(outcomes, tol)
    }

    pub fn channel(&self) -> Result<Superoperator> {
        self.channel_with(CPTP_TOL)
    }

    pub fn channel_with(&self, tol: f64) -> Result<Superoperator> {
        let kraus = operators(&self.channel.kraus, self.dimension, "channel.kraus")?;
        let e = Superoperator::from_kraus(&kraus)?;
        require_cptp(&e, tol)?;
        Ok(e)
    }

    pub fn build(&self) -> Result<Model> {
        self.build_with(CPTP_TOL)
    }

    /// Builds with `tol` for the completeness and CPTP checks.
    pub fn build_with(&self, tol: f64) -> Result<Model> {
        let measurement = self.measurement_with(tol)?;
        let channel = self.channel_with(tol)?;
        let instrument = build_instrument(&measurement, &channel)?;
        let initial_state = match &self.initial_state {
            Some(m) => Some(DensityMatrix::new(Operator::new(matrix_from_wire(
                m,
                self.dimension,
                "initial_state",
            )?)?)?),
            None => None,
        };
        Ok(Model {
            measurement,
            channel,
            instrument,
            initial_state,
        })
    }

    /// Explicit Kraus form of a thermometer model.
    pub fn thermometer(p: &ThermometerParams) -> Result<ModelSpec> {
        let meas = weak_measurement(p.eta)?;
        let channel = thermal_channel(p)?;
        let measurement = meas
            .outcomes()
            .iter()
            .map(|o| OutcomeSpec {
                value: o.value,
                kraus: o.kraus.iter().map(|k| matrix_to_wire(k.matrix())).collect(),
            })
            .collect();
        let kraus = channel
            .kraus(1e-14)?
            .iter()
            .map(|k| matrix_to_wire(k.matrix()))
            .collect();
        Ok(ModelSpec {
            dimension: 2,
            measurement,
            channel: ChannelSpec { kraus },
            initial_state: None,
            parametrization: None,
        })
    }
}

/// A model together with the location it was loaded from, so that
/// parametrized families can be rebuilt at each grid value.
#[derive(Debug, Clone)]
pub struct ModelFamily {
    pub spec: ModelSpec,
    pub base_dir: PathBuf,
}

pub const THERMOMETER_FIELDS: [&str; 5] = ["gamma", "gamma_beta", "omega", "tau", "eta"];

fn set_field(p: &mut ThermometerParams, name: &str, v: f64) -> Result<()> {
    match name {
        "gamma" => p.gamma = v,
        "gamma_beta" => p.gamma_beta = v,
        "omega" => p.omega = v,
        "tau" => p.tau = v,
        "eta" => p.eta = v,
        _ => {
            return Err(Error::Parse(format!(
                "unknown thermometer parameter '{name}' (expected one of {THERMOMETER_FIELDS:?})"
            )))
        }
    }
    Ok(())
}

impl ModelFamily {
    pub fn load(path: &Path) -> Result<Self> {
        let spec = ModelSpec::load(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(ModelFamily { spec, base_dir })
    }

    pub fn parametrization(&self) -> Result<&Parametrization> {
        let p = self
            .spec
            .parametrization
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no parametrization".into()))?;
        if p.values.is_empty() {
            return Err(Error::Parse("parametrization.values is empty".into()));
        }
        if let Rule::ExternalFilePerValue { files } = &p.rule {
            if files.len() != p.values.len() {
                return Err(Error::Parse(format!(
                    "parametrization has {} values but {} files",
                    p.values.len(),
                    files.len()
                )));
            }
        }
        if let Rule::Thermometer { base } = &p.rule {
            let mut probe = *base;
            set_field(&mut probe, &p.name, p.values[0])?;
        }
        Ok(p)
    }

    /// Instrument at an arbitrary value (thermometer rule only).
    pub fn instrument_at(&self, g: f64) -> Result<Instrument> {
        let p = self.parametrization()?;
        match &p.rule {
            Rule::Thermometer { base } => {
                let mut q = *base;
                set_field(&mut q, &p.name, g)?;
                crate::thermometer::thermometer_instrument(&q)
            }
            Rule::ExternalFilePerValue { .. } => {
                let i = p
                    .values
                    .iter()
                    .position(|&v| v == g)
                    .ok_or_else(|| Error::InvalidArgument(format!("{g} is not a grid value")))?;
                self.grid_instrument(i)
            }
        }
    }

    /// Instrument at grid point `i`.
    pub fn grid_instrument(&self, i: usize) -> Result<Instrument> {
        let p = self.parametrization()?;
        match &p.rule {
            Rule::Thermometer { .. } => self.instrument_at(p.values[i]),
            Rule::ExternalFilePerValue { files } => {
                let path = self.base_dir.join(&files[i]);
                let spec = ModelSpec::load(&path)?;
                Ok(spec.build()?.instrument)
            }
        }
    }
}

/// Weights of the three-point derivative on a nonuniform grid at the middle
/// point, for spacings `h1 = g_i - g_{i-1}` and `h2 = g_{i+1} - g_i`.
pub fn three_point_weights(h1: f64, h2: f64) -> [f64; 3] {
    [
        -h2 / (h1 * (h1 + h2)),
        (h2 - h1) / (h1 * h2),
        h1 / (h2 * (h1 + h2)),
    ]
}

/// Fisher values along the parametrization grid.
///
/// The thermometer rule differentiates by central differences around each
/// grid value. File-per-value families can only be evaluated on the grid, so
/// they use the three-point stencil and report interior points only; `step`
/// then holds the larger of the two neighbor spacings.
pub fn fisher_grid(family: &ModelFamily, l: usize, n: usize, opts: FisherOptions) -> Result<Vec<FisherReport>> {
    let p = family.parametrization()?;
    let lag = l.max(1);
    match &p.rule {
        Rule::Thermometer { .. } => p
            .values
            .par_iter()
            .map(|&g| fisher(|x| family.instrument_at(x), g, l, n, opts))
            .collect(),
        Rule::ExternalFilePerValue { .. } => {
            let g = &p.values;
            if g.len() < 3 {
                return Err(Error::InvalidArgument(
                    "file-per-value families need at least 3 grid values".into(),
                ));
            }
            if g.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArgument("grid values must be strictly increasing".into()));
            }
            let reports: Vec<AsymptoticReport> = (0..g.len())
                .into_par_iter()
                .map(|i| covariance_matrix(&crate::instrument::build_generators(&family.grid_instrument(i)?, lag)?, l))
                .collect::<Result<_>>()?;
            (1..g.len() - 1)
                .map(|i| {
                    let (h1, h2) = (g[i] - g[i - 1], g[i + 1] - g[i]);
                    let w = three_point_weights(h1, h2);
                    let m: Vec<Vec<f64>> = reports[i - 1..=i + 1].iter().map(|r| r.statistic_means()).collect();
                    let derivatives = (0..=l)
                        .map(|k| w[0] * m[0][k] + w[1] * m[1][k] + w[2] * m[2][k])
                        .collect();
                    let dsigma: Option<DMatrix<f64>> = opts.include_sigma_derivative.then(|| {
                        &reports[i - 1].sigma * w[0] + &reports[i].sigma * w[1] + &reports[i + 1].sigma * w[2]
                    });
                    fisher_from_parts(g[i], n, h1.max(h2), reports[i].sigma.clone(), derivatives, dsigma)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::max_abs;

    #[test]
    fn thermometer_spec_roundtrip() {
        let p = ThermometerParams::new(1.0, 2.0, 0.7, 0.5, 0.3).unwrap();
        let spec = ModelSpec::thermometer(&p).unwrap();
        let text = spec.to_json().unwrap();
        let back = ModelSpec::from_json(&text).unwrap();
        assert_eq!(spec, back);
        let model = back.build().unwrap();
        let direct = thermal_channel(&p).unwrap();
        assert!(max_abs(&(model.channel.matrix() - direct.matrix())) < 1e-13);
    }

    #[test]
    fn malformed_specs_are_parse_errors() {
        let e = ModelSpec::from_json("{\"dimension\": 2,").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ModelSpec::from_json(
            r#"{"dimension": 2, "measurement": [{"value": 1, "kraus": [[[[1,0]]]]}], "channel": {"kraus": []}}"#,
        )
        .unwrap()
        .build()
        .unwrap_err();
        assert!(matches!(e, Error::Parse(_)));
    }

    #[test]
    fn thermometer_rule_rebuilds_family() {
        let p = ThermometerParams::new(1.0, 2.0, 0.7, 0.5, 0.3).unwrap();
        let mut spec = ModelSpec::thermometer(&p).unwrap();
        spec.parametrization = Some(Parametrization {
            name: "gamma_beta".into(),
            values: vec![1.5, 2.0],
            rule: Rule::Thermometer { base: p },
        });
        let text = spec.to_json().unwrap();
        assert!(text.contains("\"rule\": \"thermometer\""));
        let fam = ModelFamily {
            spec: ModelSpec::from_json(&text).unwrap(),
            base_dir: PathBuf::new(),
        };
        let inst = fam.grid_instrument(1).unwrap();
        let direct = crate::thermometer::thermometer_instrument(&p).unwrap();
        assert!(max_abs(&(inst.average().matrix() - direct.average().matrix())) < 1e-15);
    }

    #[test]
    fn stencil_is_exact_for_quadratics() {
        let (a, b, c) = (0.7, 1.0, 1.6);
        let f = |x: f64| 3.0 * x * x - 2.0 * x + 0.5;
        let w = three_point_weights(b - a, c - b);
        let d = w[0] * f(a) + w[1] * f(b) + w[2] * f(c);
        assert!((d - (6.0 * b - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn file_family_agrees_with_thermometer_rule() {
        let dir = tempfile::tempdir().unwrap();
        let base = ThermometerParams::new(1.0, 2.0, 0.7, 0.5, 0.3).unwrap();
        let values = vec![1.99, 2.0, 2.012];
        let mut files = Vec::new();
        for (i, &gb) in values.iter().enumerate() {
            let name = PathBuf::from(format!("m{i}.json"));
            let spec = ModelSpec::thermometer(&base.with_gamma_beta(gb)).unwrap();
            std::fs::write(dir.path().join(&name), spec.to_json().unwrap()).unwrap();
            files.push(name);
        }
        let mut top = ModelSpec::thermometer(&base).unwrap();
        top.parametrization = Some(Parametrization {
            name: "gamma_beta".into(),
            values: values.clone(),
            rule: Rule::ExternalFilePerValue { files },
        });
        let path = dir.path().join("family.json");
        std::fs::write(&path, top.to_json().unwrap()).unwrap();
        let fam = ModelFamily::load(&path).unwrap();
        let grid = fisher_grid(&fam, 2, 1, FisherOptions::default()).unwrap();
        assert_eq!(grid.len(), 1);
        let direct = fisher(
            |gb| crate::thermometer::thermometer_instrument(&base.with_gamma_beta(gb)),
            2.0,
            2,
            1,
            FisherOptions::default(),
        )
        .unwrap();
        for k in 0..=2 {
            let rel = (grid[0].f[k] - direct.f[k]).abs() / direct.f[k];
            assert!(rel < 1e-3, "F{k}: {} vs {}", grid[0].f[k], direct.f[k]);
        }
    }
}
