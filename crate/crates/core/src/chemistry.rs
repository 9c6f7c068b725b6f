//! Pointwise nonlinear closures of the phase-field model.
//!
//! The double-well potential `P(phi) = 8 phi^2 (1 - phi)^2` pins the phase
//! field to the pure phases. Mineral precipitation and dissolution enter
//! through a net rate `f(T, c)` which is positive for oversaturated fluid
//! (`c > c_eq`, precipitation) and negative for undersaturated fluid
//! (dissolution). The combined nonlinearity of the conservative Allen-Cahn
//! equation,
//!
//! ```text
//! G(phi) = -(gamma/lambda^2) P'(phi)
//!          - (4/lambda) phi (1 - phi) f(T, c) / m_m
//!          + (gamma/lambda^2) <P'(phi)>
//! ```
//!
//! (with `<.>` the domain average), is neither increasing nor decreasing in
//! `phi`; its diagonal derivative decides per cell whether the stabilized
//! solver treats the cell implicitly or explicitly, and its global bound
//! [`stabilization_bound`] is the default stabilization parameter.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChemistryError {
    #[error("temperature must be positive for the Arrhenius rate (got {0})")]
    NonPositiveTemperature(f64),
    #[error("model parameter `{name}` must be strictly positive (got {value})")]
    NonPositiveParameter { name: &'static str, value: f64 },
}

/// Physical constants of the model.
///
/// Heat capacities are volumetric (`c_p * rho`); `activation_temperature`
/// is the activation energy divided by the gas constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Diffuse-interface width `lambda`.
    pub interface_width: f64,
    /// Interface diffusion parameter `gamma` scaling curvature-driven motion.
    pub interface_diffusion: f64,
    /// Reaction rate constant `k_0`.
    pub rate_constant: f64,
    /// Activation energy over gas constant `E/R` (temperature units).
    pub activation_temperature: f64,
    /// Equilibrium solute concentration `c_eq`.
    pub equilibrium_concentration: f64,
    /// Mineral molar density `m_m`.
    pub mineral_molar_density: f64,
    /// Solute diffusivity `D`.
    pub solute_diffusivity: f64,
    /// Volumetric heat capacity of the fluid.
    pub fluid_heat_capacity: f64,
    /// Volumetric heat capacity of the mineral.
    pub mineral_heat_capacity: f64,
    /// Heat conductivity of the fluid.
    pub fluid_conductivity: f64,
    /// Heat conductivity of the mineral.
    pub mineral_conductivity: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ChemistryError> {
        let checks = [
            ("interface_width", self.interface_width),
            ("interface_diffusion", self.interface_diffusion),
            ("rate_constant", self.rate_constant),
            ("activation_temperature", self.activation_temperature),
            ("equilibrium_concentration", self.equilibrium_concentration),
            ("mineral_molar_density", self.mineral_molar_density),
            ("solute_diffusivity", self.solute_diffusivity),
            ("fluid_heat_capacity", self.fluid_heat_capacity),
            ("mineral_heat_capacity", self.mineral_heat_capacity),
            ("fluid_conductivity", self.fluid_conductivity),
            ("mineral_conductivity", self.mineral_conductivity),
        ];
        for (name, value) in checks {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ChemistryError::NonPositiveParameter { name, value });
            }
        }
        Ok(())
    }

    /// Whether `4 gamma <= lambda k_0 / m_m` holds. The maximum principle
    /// for the coupled solute equation relies on this constraint; violating
    /// it is allowed (the phase-only benchmarks do) but worth a warning.
    pub fn gamma_constraint_satisfied(&self) -> bool {
        4.0 * self.interface_diffusion
            <= self.interface_width * self.rate_constant / self.mineral_molar_density
    }

    /// Volumetric heat capacity interpolated between fluid and mineral.
    pub fn heat_capacity_at(&self, phi: f64) -> f64 {
        phi * self.fluid_heat_capacity + (1.0 - phi) * self.mineral_heat_capacity
    }

    /// Heat conductivity interpolated between fluid and mineral.
    pub fn conductivity_at(&self, phi: f64) -> f64 {
        phi * self.fluid_conductivity + (1.0 - phi) * self.mineral_conductivity
    }
}

/// Double-well potential `P(phi) = 8 phi^2 (1 - phi)^2`.
pub fn double_well(phi: f64) -> f64 {
    let w = phi * (1.0 - phi);
    8.0 * w * w
}

/// `P'(phi) = 16 phi (1 - phi)(1 - 2 phi)`.
pub fn double_well_prime(phi: f64) -> f64 {
    16.0 * phi * (1.0 - phi) * (1.0 - 2.0 * phi)
}

/// `P''(phi) = 16 (1 - 6 phi + 6 phi^2)`.
pub fn double_well_second(phi: f64) -> f64 {
    16.0 * (1.0 - 6.0 * phi + 6.0 * phi * phi)
}

/// Arrhenius net precipitation rate with constant solubility product:
/// `f(T, c) = k_0 exp(-E/(R T)) (c^2 / c_eq^2 - 1)`.
///
/// Positive for `c > c_eq` (precipitation), negative for `c < c_eq`
/// (dissolution), zero at equilibrium.
pub fn reaction_rate(
    temperature: f64,
    concentration: f64,
    params: &ModelParams,
) -> Result<f64, ChemistryError> {
    if !(temperature > 0.0) {
        return Err(ChemistryError::NonPositiveTemperature(temperature));
    }
    let saturation = concentration / params.equilibrium_concentration;
    Ok(params.rate_constant
        * (-params.activation_temperature / temperature).exp()
        * (saturation * saturation - 1.0))
}

/// Net precipitation rate closure used by the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReactionRate {
    /// Spatially and thermally constant rate (benchmark scenarios).
    Constant(f64),
    /// Temperature- and concentration-dependent rate, see [`reaction_rate`].
    Arrhenius,
}

impl ReactionRate {
    pub fn constant(value: f64) -> Self {
        ReactionRate::Constant(value)
    }

    pub fn eval(
        &self,
        params: &ModelParams,
        temperature: f64,
        concentration: f64,
    ) -> Result<f64, ChemistryError> {
        match self {
            ReactionRate::Constant(value) => Ok(*value),
            ReactionRate::Arrhenius => reaction_rate(temperature, concentration, params),
        }
    }

    /// Maximum of `|f|` over the admissible box
    /// `[t_min, t_max] x [c_min, c_max]`. The Arrhenius rate is monotone in
    /// each argument, so evaluating the corners is exact.
    pub fn max_abs(
        &self,
        params: &ModelParams,
        t_range: (f64, f64),
        c_range: (f64, f64),
    ) -> Result<f64, ChemistryError> {
        match self {
            ReactionRate::Constant(value) => Ok(value.abs()),
            ReactionRate::Arrhenius => {
                let mut max = 0.0_f64;
                for t in [t_range.0, t_range.1] {
                    for c in [c_range.0, c_range.1] {
                        max = max.max(reaction_rate(t, c, params)?.abs());
                    }
                }
                Ok(max)
            }
        }
    }
}

/// Pointwise value of the conservative Allen-Cahn nonlinearity `G` with the
/// domain average of `P'` substituted by `p_prime_avg` (the caller owns the
/// masked sum over the mesh).
pub fn g_nonlinearity(
    phi: f64,
    p_prime_avg: f64,
    rate_value: f64,
    params: &ModelParams,
) -> f64 {
    let lam = params.interface_width;
    let gl2 = params.interface_diffusion / (lam * lam);
    -gl2 * double_well_prime(phi)
        - (4.0 / lam) * phi * (1.0 - phi) * rate_value / params.mineral_molar_density
        + gl2 * p_prime_avg
}

/// Diagonal derivative of `G` with respect to the local `phi`,
/// `(96 gamma / lambda^2)(phi(1-phi) - <phi(1-phi)>) - (4/lambda)(f/m_m)(1 - 2 phi)`,
/// where `well_avg` is the supplied domain average of `phi (1 - phi)`.
/// Its sign classifies a cell as increasing (explicit) or decreasing
/// (implicit) for the split solver, and its bound is [`stabilization_bound`].
pub fn g_derivative(phi: f64, well_avg: f64, rate_value: f64, params: &ModelParams) -> f64 {
    let lam = params.interface_width;
    96.0 * params.interface_diffusion / (lam * lam) * (phi * (1.0 - phi) - well_avg)
        - (4.0 / lam) * rate_value / params.mineral_molar_density * (1.0 - 2.0 * phi)
}

/// Upper bound `24 gamma / lambda^2 + (4 / lambda) f_max / m_m` on
/// `|dG/dphi|` over `phi` in `[0, 1]`; the default stabilization parameter
/// of the split L-scheme. `f_max` is the maximum of `|f|` over the
/// admissible temperature/concentration box (see [`ReactionRate::max_abs`]).
pub fn stabilization_bound(params: &ModelParams, f_max: f64) -> f64 {
    let lam = params.interface_width;
    24.0 * params.interface_diffusion / (lam * lam)
        + 4.0 / lam * f_max / params.mineral_molar_density
}
