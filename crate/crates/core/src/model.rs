//! Physical parameters of the down-conversion source and the closed-form
//! relations between them: threshold, escape efficiency, pump parameter,
//! two-mode correlation kernels and photon rates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::{parse_f64, KeyValues};
use crate::error::{Error, Result};

/// Every constant of the OPO, pump, filters, losses and detectors.
///
/// `gamma_half` and `trigger_filter_hwhm` are angular frequencies (rad/s).
/// Rates derived from them (photons per second) are ordinary inverse
/// seconds: the kernel `auto(0)` is used as-is with no 2π conversion.
///
/// Config keys (flat `key = value` file):
///
/// | key | field | unit |
/// |---|---|---|
/// | `gamma_half_hz` | `gamma_half / 2π` | Hz |
/// | `epsilon` | `epsilon` | - |
/// | `t_out` | `t_out` | - |
/// | `l_int` | `l_int` | - |
/// | `e_nl` | `e_nl` | 1/W |
/// | `trigger_filter_hwhm_hz` | `trigger_filter_hwhm / 2π` | Hz |
/// | `eta_escape` | `eta_escape` | - |
/// | `eta_path_signal` | `eta_path_signal` | - |
/// | `eta_visibility` | `eta_visibility` | - |
/// | `eta_diode` | `eta_diode` | - |
/// | `eta_electronic` | `eta_electronic` | - |
/// | `eta_trigger_path` | `eta_trigger_path` | - |
/// | `eta_apd` | `eta_apd` | - |
/// | `dark_rate` | `dark_rate` | 1/s |
/// | `false_click_fraction` | `false_click_fraction` | - |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub gamma_half: f64,
    pub epsilon: f64,
    pub t_out: f64,
    pub l_int: f64,
    pub e_nl: f64,
    pub trigger_filter_hwhm: f64,
    pub eta_escape: f64,
    pub eta_path_signal: f64,
    pub eta_visibility: f64,
    pub eta_diode: f64,
    pub eta_electronic: f64,
    pub eta_trigger_path: f64,
    pub eta_apd: f64,
    pub dark_rate: f64,
    pub false_click_fraction: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            gamma_half: 2.0 * PI * 4.0e6,
            epsilon: 0.09,
            t_out: 0.125,
            l_int: 0.004,
            e_nl: 0.020,
            trigger_filter_hwhm: 2.0 * PI * 24.0e6,
            eta_escape: 0.97,
            eta_path_signal: 0.92,
            eta_visibility: 0.97,
            eta_diode: 0.98,
            eta_electronic: 0.91,
            eta_trigger_path: 0.14,
            eta_apd: 0.44,
            dark_rate: 100.0,
            false_click_fraction: 0.0,
        }
    }
}

impl SourceParams {
    pub const KEYS: [&'static str; 15] = [
        "gamma_half_hz",
        "epsilon",
        "t_out",
        "l_int",
        "e_nl",
        "trigger_filter_hwhm_hz",
        "eta_escape",
        "eta_path_signal",
        "eta_visibility",
        "eta_diode",
        "eta_electronic",
        "eta_trigger_path",
        "eta_apd",
        "dark_rate",
        "false_click_fraction",
    ];

    /// Applies one config entry. Returns `Ok(false)` when the key does not
    /// belong to the source parameters.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = parse_f64(key, value)?;
        match key {
            "gamma_half_hz" => self.gamma_half = 2.0 * PI * v,
            "epsilon" => self.epsilon = v,
            "t_out" => self.t_out = v,
            "l_int" => self.l_int = v,
            "e_nl" => self.e_nl = v,
            "trigger_filter_hwhm_hz" => self.trigger_filter_hwhm = 2.0 * PI * v,
            "eta_escape" => self.eta_escape = v,
            "eta_path_signal" => self.eta_path_signal = v,
            "eta_visibility" => self.eta_visibility = v,
            "eta_diode" => self.eta_diode = v,
            "eta_electronic" => self.eta_electronic = v,
            "eta_trigger_path" => self.eta_trigger_path = v,
            "eta_apd" => self.eta_apd = v,
            "dark_rate" => self.dark_rate = v,
            "false_click_fraction" => self.false_click_fraction = v,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a config containing only source keys; unknown keys are an error.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut params = Self::default();
        for entry in KeyValues::parse(text)?.entries() {
            if !params.set(&entry.key, &entry.value)? {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{}`",
                    entry.line, entry.key
                )));
            }
        }
        params.validate()?;
        Ok(params)
    }

    /// `(key, value)` pairs in config units, in `KEYS` order.
    pub fn to_config_entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("gamma_half_hz", self.gamma_half / (2.0 * PI)),
            ("epsilon", self.epsilon),
            ("t_out", self.t_out),
            ("l_int", self.l_int),
            ("e_nl", self.e_nl),
            ("trigger_filter_hwhm_hz", self.trigger_filter_hwhm / (2.0 * PI)),
            ("eta_escape", self.eta_escape),
            ("eta_path_signal", self.eta_path_signal),
            ("eta_visibility", self.eta_visibility),
            ("eta_diode", self.eta_diode),
            ("eta_electronic", self.eta_electronic),
            ("eta_trigger_path", self.eta_trigger_path),
            ("eta_apd", self.eta_apd),
            ("dark_rate", self.dark_rate),
            ("false_click_fraction", self.false_click_fraction),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_half > 0.0 && self.gamma_half.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma_half must be positive, got {}",
                self.gamma_half
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        if self.t_out < 0.0 || self.l_int < 0.0 || self.t_out + self.l_int >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "need t_out, l_int >= 0 and t_out + l_int < 1, got {} + {}",
                self.t_out, self.l_int
            )));
        }
        if !(self.e_nl > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "e_nl must be positive, got {}",
                self.e_nl
            )));
        }
        if !(self.trigger_filter_hwhm > 0.0) {
            return Err(Error::InvalidParameter(
                "trigger_filter_hwhm must be positive".into(),
            ));
        }
        for (name, eta) in [
            ("eta_escape", self.eta_escape),
            ("eta_path_signal", self.eta_path_signal),
            ("eta_visibility", self.eta_visibility),
            ("eta_diode", self.eta_diode),
            ("eta_electronic", self.eta_electronic),
            ("eta_trigger_path", self.eta_trigger_path),
            ("eta_apd", self.eta_apd),
        ] {
            check_efficiency(name, eta)?;
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dark_rate must be non-negative, got {}",
                self.dark_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.false_click_fraction) {
            return Err(Error::InvalidParameter(format!(
                "false_click_fraction must lie in [0, 1], got {}",
                self.false_click_fraction
            )));
        }
        Ok(())
    }

    /// Slow decay rate λ = γ(1+ε) of the correlation kernels.
    pub fn lambda(&self) -> f64 {
        self.gamma_half * (1.0 + self.epsilon)
    }

    /// Fast decay rate µ = γ(1−ε).
    pub fn mu(&self) -> f64 {
        self.gamma_half * (1.0 - self.epsilon)
    }

    /// Measurement and generation stages on the signal side, from escape to electronics.
    pub fn signal_stages(&self) -> EfficiencyStages {
        EfficiencyStages {
            escape: self.eta_escape,
            path: self.eta_path_signal,
            visibility: self.eta_visibility,
            diode: self.eta_diode,
            electronic: self.eta_electronic,
        }
    }
}

fn check_efficiency(name: &str, eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must lie in (0, 1], got {eta}"
        )))
    }
}

/// Pump parameter from the measured parametric gain, inverting G = 1/(1−ε)².
pub fn pump_parameter_from_gain(gain: f64) -> Result<f64> {
    if !(gain >= 1.0) || !gain.is_finite() {
        return Err(Error::InvalidGain(gain));
    }
    Ok(1.0 - 1.0 / gain.sqrt())
}

/// Oscillation threshold (T+L)²/(4·E_NL) in watts.
pub fn threshold_power(t_out: f64, l_int: f64, e_nl: f64) -> Result<f64> {
    if !(e_nl > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "effective nonlinearity must be positive, got {e_nl}"
        )));
    }
    if t_out < 0.0 || l_int < 0.0 {
        return Err(Error::InvalidParameter(
            "transmission and loss must be non-negative".into(),
        ));
    }
    let total = t_out + l_int;
    Ok(total * total / (4.0 * e_nl))
}

/// T/(T+L).
pub fn escape_efficiency(t_out: f64, l_int: f64) -> Result<f64> {
    if t_out < 0.0 || l_int < 0.0 || t_out + l_int <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "escape efficiency needs T > 0, L >= 0 (got T={t_out}, L={l_int})"
        )));
    }
    Ok(t_out / (t_out + l_int))
}

/// One term `amplitude · exp(−rate·|τ|)` of a kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub amplitude: f64,
    pub rate: f64,
}

impl ExpTerm {
    pub fn eval(&self, tau: f64) -> f64 {
        self.amplitude * (-self.rate * tau.abs()).exp()
    }
}

/// Kernel values at one delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValues {
    /// ⟨a₊(t) a₋(t+τ)⟩
    pub cross: f64,
    /// ⟨a₊†(t) a₊(t+τ)⟩
    pub auto: f64,
}

/// Two-mode field correlation kernels of the below-threshold OPO.
///
/// Both kernels are sums of two exponentials at rates µ and λ; every other
/// second moment of the two modes vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpoKernels {
    lambda: f64,
    mu: f64,
    prefactor: f64,
}

impl OpoKernels {
    pub fn new(params: &SourceParams) -> Result<Self> {
        if params.epsilon >= 1.0 {
            return Err(Error::AboveThreshold(params.epsilon));
        }
        if params.epsilon < 0.0 || !(params.gamma_half > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernels need gamma_half > 0 and epsilon >= 0 (got {}, {})",
                params.gamma_half, params.epsilon
            )));
        }
        let (lambda, mu) = (params.lambda(), params.mu());
        Ok(Self {
            lambda,
            mu,
            prefactor: (lambda * lambda - mu * mu) / 4.0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn cross_terms(&self) -> [ExpTerm; 2] {
        [
            ExpTerm {
                amplitude: self.prefactor / (2.0 * self.mu),
                rate: self.mu,
            },
            ExpTerm {
                amplitude: self.prefactor / (2.0 * self.lambda),
                rate: self.lambda,
            },
        ]
    }

    pub fn auto_terms(&self) -> [ExpTerm; 2] {
        [
            ExpTerm {
                amplitude: self.prefactor / (2.0 * self.mu),
                rate: self.mu,
            },
            ExpTerm {
                amplitude: -self.prefactor / (2.0 * self.lambda),
                rate: self.lambda,
            },
        ]
    }

    pub fn cross(&self, tau: f64) -> f64 {
        self.cross_terms().iter().map(|t| t.eval(tau)).sum()
    }

    pub fn auto(&self, tau: f64) -> f64 {
        self.auto_terms().iter().map(|t| t.eval(tau)).sum()
    }
}

pub fn correlation_kernels(params: &SourceParams, tau: f64) -> Result<KernelValues> {
    let k = OpoKernels::new(params)?;
    Ok(KernelValues {
        cross: k.cross(tau),
        auto: k.auto(tau),
    })
}

/// Photon flux per mode, γε²/(1−ε²) = auto(0).
pub fn production_rate(params: &SourceParams) -> Result<f64> {
    Ok(OpoKernels::new(params)?.auto(0.0))
}

/// Trigger-arm transmission from intracavity photon to APD click.
pub fn trigger_chain_efficiency(params: &SourceParams) -> f64 {
    params.eta_apd * params.eta_trigger_path * params.eta_escape
}

/// Detected trigger rate R·η_apd·η_path·η_esc for a production rate R.
pub fn trigger_click_rate(params: &SourceParams, production_rate: f64) -> f64 {
    production_rate * trigger_chain_efficiency(params)
}

/// Production rate inferred from an observed click rate (inverse of
/// [`trigger_click_rate`]).
pub fn production_rate_from_clicks(params: &SourceParams, click_rate: f64) -> f64 {
    click_rate / trigger_chain_efficiency(params)
}

/// Click rates by origin and the resulting fraction of genuine heralds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeraldRates {
    pub true_clicks: f64,
    pub dark_clicks: f64,
    pub leakage_clicks: f64,
    pub total: f64,
    /// Probability that a click heralds a signal photon.
    pub p_true: f64,
}

pub fn herald_rates(params: &SourceParams) -> Result<HeraldRates> {
    let true_clicks = trigger_click_rate(params, production_rate(params)?);
    let f = params.false_click_fraction;
    if f >= 1.0 {
        return Err(Error::InconsistentRates(
            "false_click_fraction of 1 leaves no genuine heralds".into(),
        ));
    }
    let total = (true_clicks + params.dark_rate) / (1.0 - f);
    if !(total > 0.0) {
        return Err(Error::InconsistentRates(
            "no clicks at all: epsilon and dark_rate are both zero".into(),
        ));
    }
    let leakage_clicks = f * total;
    let p_true = 1.0 - (params.dark_rate + leakage_clicks) / total;
    if !(0.0..=1.0).contains(&p_true) {
        return Err(Error::InconsistentRates(format!(
            "true-herald probability {p_true} outside [0, 1]"
        )));
    }
    Ok(HeraldRates {
        true_clicks,
        dark_clicks: params.dark_rate,
        leakage_clicks,
        total,
        p_true: p_true.clamp(0.0, 1.0),
    })
}

/// Signal-side efficiency stages. `visibility` enters squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyStages {
    pub escape: f64,
    pub path: f64,
    pub visibility: f64,
    pub diode: f64,
    pub electronic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyBudget {
    pub escape: f64,
    pub path: f64,
    /// Mode overlap with the local oscillator, visibility².
    pub overlap: f64,
    pub diode: f64,
    pub electronic: f64,
    pub eta_total: f64,
}

pub fn efficiency_budget(stages: EfficiencyStages) -> Result<EfficiencyBudget> {
    for (name, eta) in [
        ("escape", stages.escape),
        ("path", stages.path),
        ("visibility", stages.visibility),
        ("diode", stages.diode),
        ("electronic", stages.electronic),
    ] {
        check_efficiency(name, eta)?;
    }
    let overlap = stages.visibility * stages.visibility;
    Ok(EfficiencyBudget {
        escape: stages.escape,
        path: stages.path,
        overlap,
        diode: stages.diode,
        electronic: stages.electronic,
        eta_total: stages.escape * stages.path * overlap * stages.diode * stages.electronic,
    })
}

/// Efficiency factor of white electronic noise `db_below_vacuum` dB under
/// the vacuum level, once the vacuum calibration absorbs it: 1/(1+10^(−dB/10)).
pub fn electronic_noise_efficiency(db_below_vacuum: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf(-db_below_vacuum / 10.0))
}

/// `∫₀^∞ Γe^{−Γs} e^{−r|u+s|} ds`: an exponential kernel seen through a
/// one-sided exponential response of rate Γ.
pub fn filtered_exponential(rate: f64, filter_rate: f64, u: f64) -> f64 {
    if u >= 0.0 {
        return filter_rate * (-rate * u).exp() / (filter_rate + rate);
    }
    let v = -u;
    let diff = filter_rate - rate;
    // (e^{-rv} - e^{-Γv}) / (Γ - r), continuous through Γ = r
    let rising = if (diff * v).abs() < 1e-12 {
        v * (-rate * v).exp()
    } else {
        (-rate * v).exp() * -(-diff * v).exp_m1() / diff
    };
    filter_rate * (rising + (-filter_rate * v).exp() / (filter_rate + rate))
}
