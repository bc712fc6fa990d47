//! Generative description of a strategic MDP.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::features::FeatureMap;
use crate::error::{dim_check, Error, Result};
use crate::rng::{categorical, std_normal};

pub type Vector = Vec<f64>;
/// Row-major dense matrix.
pub type Rows = Vec<Vec<f64>>;

pub(crate) fn matvec(m: &Rows, x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| crate::linalg::dot(row, x)).collect()
}

fn check_rows(m: &Rows, rows: usize, cols: usize, what: &str) -> Result<()> {
    dim_check(m.len() == rows && m.iter().all(|r| r.len() == cols), || {
        format!("{what} must be {rows}x{cols}")
    })
}

/// Private type population `P_h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TypeDistribution {
    Finite {
        support: Vec<Vector>,
        weights: Vector,
    },
    /// Independent coordinates `i_j ~ N(mean_j, std_j^2)`.
    Gaussian {
        mean: Vector,
        std: Vector,
    },
}

impl TypeDistribution {
    pub fn dim(&self) -> usize {
        match self {
            TypeDistribution::Finite { support, .. } => support.first().map_or(0, Vec::len),
            TypeDistribution::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            TypeDistribution::Finite { support, weights } => support[categorical(rng, weights)].clone(),
            TypeDistribution::Gaussian { mean, std } => {
                mean.iter().zip(std).map(|(m, s)| m + s * std_normal(rng)).collect()
            }
        }
    }

    pub fn mean(&self) -> Vector {
        match self {
            TypeDistribution::Finite { support, weights } => {
                let mut out = vec![0.0; self.dim()];
                for (x, w) in support.iter().zip(weights) {
                    for (o, v) in out.iter_mut().zip(x) {
                        *o += w * v;
                    }
                }
                out
            }
            TypeDistribution::Gaussian { mean, .. } => mean.clone(),
        }
    }

    /// `E[i_p i_q]`.
    pub fn second_moment(&self, p: usize, q: usize) -> f64 {
        match self {
            TypeDistribution::Finite { support, weights } => {
                support.iter().zip(weights).map(|(x, w)| w * x[p] * x[q]).sum()
            }
            TypeDistribution::Gaussian { mean, std } => mean[p] * mean[q] + if p == q { std[p] * std[p] } else { 0.0 },
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, TypeDistribution::Finite { .. })
    }

    fn validate(&self) -> Result<()> {
        match self {
            TypeDistribution::Finite { support, weights } => {
                if support.is_empty() || support.len() != weights.len() {
                    return Err(Error::Config(
                        "finite type support and weights must be nonempty and aligned".into(),
                    ));
                }
                let d = support[0].len();
                dim_check(support.iter().all(|x| x.len() == d), || "ragged type support".into())?;
                check_probability_vector(weights)
            }
            TypeDistribution::Gaussian { mean, std } => {
                dim_check(mean.len() == std.len(), || {
                    "gaussian type mean/std length mismatch".into()
                })?;
                if std.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::Config("gaussian type std must be nonnegative".into()));
                }
                Ok(())
            }
        }
    }
}

pub(crate) fn check_probability_vector(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "probability vector must be nonnegative and sum to 1 (sum = {sum})"
        )));
    }
    Ok(())
}

/// A matrix whose entries are read from the private type: entry `(r, c)` is
/// `i[offset + r * cols + c]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeMatrix {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TypeMatrix {
    #[inline]
    pub fn index(&self, r: usize, c: usize) -> usize {
        self.offset + r * self.cols + c
    }

    pub fn read(&self, i: &[f64]) -> Rows {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| i[self.index(r, c)]).collect())
            .collect()
    }

    fn validate(&self, type_dim: usize) -> Result<()> {
        dim_check(self.offset + self.rows * self.cols <= type_dim, || {
            format!("type matrix {self:?} exceeds type dimension {type_dim}")
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gain {
    Fixed { w: Rows },
    FromType(TypeMatrix),
}

impl Gain {
    fn shape(&self) -> (usize, usize) {
        match self {
            Gain::Fixed { w } => (w.len(), w.first().map_or(0, Vec::len)),
            Gain::FromType(t) => (t.rows, t.cols),
        }
    }
}

pub type UtilityFn = Arc<dyn Fn(usize, &[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// Agent utility `R_a,h(s, a, i, b)`.
#[derive(Clone)]
pub enum AgentUtility {
    /// `-q/2 |b|^2 + b.(U_a a + U_s s + U_i i + u0)`; absent matrices are zero.
    Bilinear {
        quad: f64,
        from_action: Option<Rows>,
        from_state: Option<Rows>,
        from_type: Option<Rows>,
        offset: Option<Vector>,
    },
    Custom(UtilityFn),
}

impl fmt::Debug for AgentUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentUtility::Bilinear { quad, .. } => write!(f, "Bilinear {{ quad: {quad}, .. }}"),
            AgentUtility::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl AgentUtility {
    pub fn eval(&self, h: usize, s: &[f64], a: &[f64], i: &[f64], b: &[f64]) -> f64 {
        match self {
            AgentUtility::Bilinear {
                quad,
                from_action,
                from_state,
                from_type,
                offset,
            } => {
                let mut lin = offset.clone().unwrap_or_else(|| vec![0.0; b.len()]);
                for (m, x) in [(from_action, a), (from_state, s), (from_type, i)] {
                    if let Some(m) = m {
                        for (l, v) in lin.iter_mut().zip(matvec(m, x)) {
                            *l += v;
                        }
                    }
                }
                -0.5 * quad * crate::linalg::dot(b, b) + crate::linalg::dot(b, &lin)
            }
            AgentUtility::Custom(f) => f(h, s, a, i, b),
        }
    }
}

#[derive(Clone, Debug)]
pub enum AgentModel {
    /// `b = W^T a_slice` where `W` has shape `len(a_slice) x d_b`.
    ClosedFormLinear {
        action_range: Option<(usize, usize)>,
        gain: Gain,
    },
    FiniteArgmax {
        candidates: Vec<Vector>,
        utility: AgentUtility,
    },
}

impl AgentModel {
    pub fn agent_dim(&self) -> usize {
        match self {
            AgentModel::ClosedFormLinear { gain, .. } => gain.shape().1,
            AgentModel::FiniteArgmax { candidates, .. } => candidates.first().map_or(0, Vec::len),
        }
    }

    pub(crate) fn action_part<'a>(range: &Option<(usize, usize)>, a: &'a [f64]) -> &'a [f64] {
        match range {
            None => a,
            Some((start, len)) => &a[*start..start + len],
        }
    }
}

pub type ChannelFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64], &[f64]) -> Vector + Send + Sync>;

/// Observation `o = C_b b + C_s s + C_a a + C_i i + W(i) b + c + scale * nu`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearChannel {
    pub obs_dim: usize,
    pub from_agent: Option<Rows>,
    pub from_state: Option<Rows>,
    pub from_action: Option<Rows>,
    pub from_type: Option<Rows>,
    pub type_gain: Option<TypeMatrix>,
    pub offset: Option<Vector>,
    pub noise_scale: f64,
}

impl LinearChannel {
    /// Noise-free part of the observation.
    pub fn mean_given(&self, s: &[f64], a: &[f64], i: &[f64], b: &[f64]) -> Vector {
        let mut o = self.offset.clone().unwrap_or_else(|| vec![0.0; self.obs_dim]);
        for (m, x) in [
            (&self.from_agent, b),
            (&self.from_state, s),
            (&self.from_action, a),
            (&self.from_type, i),
        ] {
            if let Some(m) = m {
                for (ov, v) in o.iter_mut().zip(matvec(m, x)) {
                    *ov += v;
                }
            }
        }
        if let Some(t) = &self.type_gain {
            for (r, ov) in o.iter_mut().enumerate() {
                for (c, bc) in b.iter().enumerate() {
                    *ov += i[t.index(r, c)] * bc;
                }
            }
        }
        o
    }
}

#[derive(Clone)]
pub enum ObservationChannel {
    Linear(LinearChannel),
    /// `f(s, a, i, b, noise)` with `noise_dim` standard normals per call.
    Custom {
        obs_dim: usize,
        noise_dim: usize,
        f: ChannelFn,
    },
}

impl fmt::Debug for ObservationChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservationChannel::Linear(c) => f.debug_tuple("Linear").field(c).finish(),
            ObservationChannel::Custom { obs_dim, noise_dim, .. } => {
                write!(f, "Custom {{ obs_dim: {obs_dim}, noise_dim: {noise_dim} }}")
            }
        }
    }
}

impl ObservationChannel {
    pub fn obs_dim(&self) -> usize {
        match self {
            ObservationChannel::Linear(c) => c.obs_dim,
            ObservationChannel::Custom { obs_dim, .. } => *obs_dim,
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            ObservationChannel::Linear(c) => c.obs_dim,
            ObservationChannel::Custom { noise_dim, .. } => *noise_dim,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            ObservationChannel::Linear(c) => c.noise_scale == 0.0,
            ObservationChannel::Custom { noise_dim, .. } => *noise_dim == 0,
        }
    }

    pub fn observe(&self, s: &[f64], a: &[f64], i: &[f64], b: &[f64], noise: &[f64]) -> Vector {
        match self {
            ObservationChannel::Linear(c) => {
                let mut o = c.mean_given(s, a, i, b);
                if c.noise_scale != 0.0 {
                    for (ov, n) in o.iter_mut().zip(noise) {
                        *ov += c.noise_scale * n;
                    }
                }
                o
            }
            ObservationChannel::Custom { f, .. } => f(s, a, i, b, noise),
        }
    }
}

pub type ConfounderFn = Arc<dyn Fn(&[f64]) -> Vector + Send + Sync>;

/// Confounder map `i -> R^out`, required to have mean zero under `P_h`.
#[derive(Clone)]
pub enum ConfounderMap {
    Zero {
        out_dim: usize,
    },
    /// `W (i - center)`.
    Linear {
        weights: Rows,
        center: Vector,
    },
    Custom {
        out_dim: usize,
        f: ConfounderFn,
    },
}

impl fmt::Debug for ConfounderMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfounderMap::Zero { out_dim } => write!(f, "Zero({out_dim})"),
            ConfounderMap::Linear { weights, center } => f
                .debug_struct("Linear")
                .field("weights", weights)
                .field("center", center)
                .finish(),
            ConfounderMap::Custom { out_dim, .. } => write!(f, "Custom({out_dim})"),
        }
    }
}

impl ConfounderMap {
    pub fn out_dim(&self) -> usize {
        match self {
            ConfounderMap::Zero { out_dim } | ConfounderMap::Custom { out_dim, .. } => *out_dim,
            ConfounderMap::Linear { weights, .. } => weights.len(),
        }
    }

    pub fn eval(&self, i: &[f64]) -> Vector {
        match self {
            ConfounderMap::Zero { out_dim } => vec![0.0; *out_dim],
            ConfounderMap::Linear { weights, center } => {
                let centered: Vec<f64> = i.iter().zip(center).map(|(x, c)| x - c).collect();
                matvec(weights, &centered)
            }
            ConfounderMap::Custom { f, .. } => f(i),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ConfounderMap::Zero { .. } => true,
            ConfounderMap::Linear { weights, .. } => weights.iter().flatten().all(|w| *w == 0.0),
            ConfounderMap::Custom { .. } => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    Point { state: Vector },
    Gaussian { mean: Vector, std: Vector },
    Finite { support: Vec<Vector>, weights: Vector },
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Point { state } => state.len(),
            InitialState::Gaussian { mean, .. } => mean.len(),
            InitialState::Finite { support, .. } => support.first().map_or(0, Vec::len),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            InitialState::Point { state } => state.clone(),
            InitialState::Gaussian { mean, std } => {
                mean.iter().zip(std).map(|(m, s)| m + s * std_normal(rng)).collect()
            }
            InitialState::Finite { support, weights } => support[categorical(rng, weights)].clone(),
        }
    }
}

/// Everything at stage `h` that is known at planning time.
#[derive(Clone, Debug)]
pub struct StageStructure {
    pub types: TypeDistribution,
    pub agent: AgentModel,
    pub channel: ObservationChannel,
    pub reward_confounder: ConfounderMap,
    pub transition_confounder: ConfounderMap,
    pub phi_x: FeatureMap,
    pub psi_z: FeatureMap,
}

/// The parameter-free part of a strategic MDP.
#[derive(Clone, Debug)]
pub struct EnvStructure {
    pub horizon: usize,
    pub state_dim: usize,
    pub action_set: Vec<Vector>,
    pub stages: Vec<StageStructure>,
    pub sigma: f64,
    pub initial_state: InitialState,
}

impl EnvStructure {
    pub fn action_dim(&self) -> usize {
        self.action_set.first().map_or(0, Vec::len)
    }

    pub fn stage(&self, h: usize) -> &StageStructure {
        &self.stages[h]
    }

    pub fn check_stage(&self, h: usize) -> Result<()> {
        if h >= self.horizon {
            return Err(Error::Precondition(format!(
                "stage {h} outside horizon {}",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.state_dim == 0 {
            return Err(Error::Config("horizon and state_dim must be positive".into()));
        }
        if self.action_set.is_empty() {
            return Err(Error::Config("action_set is empty".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("sigma must be nonnegative".into()));
        }
        let da = self.action_dim();
        dim_check(self.action_set.iter().all(|a| a.len() == da), || {
            "ragged action_set".into()
        })?;
        dim_check(self.initial_state.dim() == self.state_dim, || {
            "initial state dimension differs from state_dim".into()
        })?;
        if let InitialState::Finite { weights, .. } = &self.initial_state {
            check_probability_vector(weights)?;
        }
        dim_check(self.stages.len() == self.horizon, || {
            format!("expected {} stage structures, got {}", self.horizon, self.stages.len())
        })?;
        for (h, st) in self.stages.iter().enumerate() {
            st.types.validate()?;
            let di = st.types.dim();
            let db = st.agent.agent_dim();
            match &st.agent {
                AgentModel::ClosedFormLinear { action_range, gain } => {
                    let slice_len = match action_range {
                        None => da,
                        Some((start, len)) => {
                            dim_check(start + len <= da, || {
                                format!("stage {h}: agent action slice out of range")
                            })?;
                            *len
                        }
                    };
                    let (rows, cols) = gain.shape();
                    dim_check(rows == slice_len && cols > 0, || {
                        format!("stage {h}: gain must be {slice_len}xd_b, got {rows}x{cols}")
                    })?;
                    match gain {
                        Gain::Fixed { w } => check_rows(w, rows, cols, "gain")?,
                        Gain::FromType(t) => t.validate(di)?,
                    }
                }
                AgentModel::FiniteArgmax { candidates, utility } => {
                    if candidates.is_empty() {
                        return Err(Error::Config(format!("stage {h}: agent candidate set is empty")));
                    }
                    dim_check(candidates.iter().all(|c| c.len() == db), || {
                        format!("stage {h}: ragged agent candidates")
                    })?;
                    if let AgentUtility::Bilinear {
                        from_action,
                        from_state,
                        from_type,
                        offset,
                        ..
                    } = utility
                    {
                        for (m, cols, what) in [
                            (from_action, da, "utility action map"),
                            (from_state, self.state_dim, "utility state map"),
                            (from_type, di, "utility type map"),
                        ] {
                            if let Some(m) = m {
                                check_rows(m, db, cols, what)?;
                            }
                        }
                        if let Some(o) = offset {
                            dim_check(o.len() == db, || "utility offset length".into())?;
                        }
                    }
                }
            }
            if let ObservationChannel::Linear(c) = &st.channel {
                let d_o = c.obs_dim;
                for (m, cols, what) in [
                    (&c.from_agent, db, "channel agent map"),
                    (&c.from_state, self.state_dim, "channel state map"),
                    (&c.from_action, da, "channel action map"),
                    (&c.from_type, di, "channel type map"),
                ] {
                    if let Some(m) = m {
                        check_rows(m, d_o, cols, what)?;
                    }
                }
                if let Some(t) = &c.type_gain {
                    dim_check(t.rows == d_o && t.cols == db, || "channel type gain shape".into())?;
                    t.validate(di)?;
                }
                if let Some(o) = &c.offset {
                    dim_check(o.len() == d_o, || "channel offset length".into())?;
                }
                if !(c.noise_scale >= 0.0) {
                    return Err(Error::Config("channel noise scale must be nonnegative".into()));
                }
            }
            dim_check(st.reward_confounder.out_dim() == 1, || {
                format!("stage {h}: f1 must be scalar")
            })?;
            dim_check(st.transition_confounder.out_dim() == self.state_dim, || {
                format!("stage {h}: f2 must map into the state space")
            })?;
            for (cm, what) in [(&st.reward_confounder, "f1"), (&st.transition_confounder, "f2")] {
                if let ConfounderMap::Linear { weights, center } = cm {
                    check_rows(weights, cm.out_dim(), di, what)?;
                    dim_check(center.len() == di, || format!("{what} center length"))?;
                }
            }
            let inputs = crate::env::features::InputDims {
                state: self.state_dim,
                action: da,
                obs: st.channel.obs_dim(),
            };
            dim_check(st.phi_x.inputs == inputs && st.psi_z.inputs == inputs, || {
                format!(
                    "stage {h}: feature maps declared for {:?}, environment has {inputs:?}",
                    st.phi_x.inputs
                )
            })?;
        }
        Ok(())
    }
}

/// A full strategic MDP: structure plus the true reward and transition parameters.
#[derive(Clone, Debug)]
pub struct StrategicMdpSpec {
    pub structure: Arc<EnvStructure>,
    /// `theta*_r,h`, one vector per stage.
    pub reward_params: Vec<Vector>,
    /// `Theta*_G,h`, a `d1 x n_h` matrix per stage.
    pub transition_params: Vec<Rows>,
    pub eps_scale: f64,
}

impl StrategicMdpSpec {
    pub fn new(
        structure: EnvStructure,
        reward_params: Vec<Vector>,
        transition_params: Vec<Rows>,
        eps_scale: f64,
    ) -> Result<Self> {
        let spec = Self {
            structure: Arc::new(structure),
            reward_params,
            transition_params,
            eps_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn horizon(&self) -> usize {
        self.structure.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let st = &self.structure;
        st.validate()?;
        if !(self.eps_scale >= 0.0) {
            return Err(Error::Config("eps_scale must be nonnegative".into()));
        }
        dim_check(
            self.reward_params.len() == st.horizon && self.transition_params.len() == st.horizon,
            || "one reward and transition parameter per stage required".into(),
        )?;
        for h in 0..st.horizon {
            let n = st.stages[h].phi_x.dim;
            dim_check(self.reward_params[h].len() == n, || {
                format!("stage {h}: reward parameter must have length {n}")
            })?;
            check_rows(&self.transition_params[h], st.state_dim, n, "transition parameter")?;
        }
        Ok(())
    }
}
