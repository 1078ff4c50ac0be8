use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, AdamConfig, AdamState, ForwardCache, Gradients, Matrix, Mlp, NnError};

/// Action dimensions fed to the critic.
pub const ACTION_DIM: usize = 2;

/// Q-network whose first layer sees the state only; the action joins the
/// first hidden activation at the second layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    state_layer: Mlp,
    head: Mlp,
}

pub struct CriticCache {
    state: ForwardCache,
    head: ForwardCache,
}

impl CriticCache {
    pub fn q(&self) -> &Matrix {
        self.head.output()
    }
}

#[derive(Debug, Clone)]
pub struct CriticGradients {
    pub state_layer: Gradients,
    pub head: Gradients,
}

/// Adam state for both parts of a critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticOptimizer {
    pub state_layer: AdamState,
    pub head: AdamState,
}

impl CriticOptimizer {
    pub fn new(critic: &Critic, config: AdamConfig) -> Self {
        Self {
            state_layer: AdamState::new(&critic.state_layer, config),
            head: AdamState::new(&critic.head, config),
        }
    }

    pub fn step(&mut self, critic: &mut Critic, grads: &CriticGradients) -> Result<(), NnError> {
        self.state_layer.step(&mut critic.state_layer, &grads.state_layer)?;
        self.head.step(&mut critic.head, &grads.head)
    }
}

impl Critic {
    /// `hidden[0]` is the state-only layer; the rest follow the action join.
    pub fn init<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self, NnError> {
        let (&first, rest) = hidden.split_first().ok_or(NnError::TooFewDims(0))?;
        let state_layer = Mlp::init_hidden(&[state_dim, first], &[Activation::Relu], rng)?;
        let mut dims = vec![first + ACTION_DIM];
        dims.extend_from_slice(rest);
        dims.push(1);
        let mut acts = vec![Activation::Relu; rest.len()];
        acts.push(Activation::Linear);
        let head = Mlp::init(&dims, &acts, rng)?;
        Ok(Self { state_layer, head })
    }

    pub fn from_parts(state_layer: Mlp, head: Mlp) -> Result<Self, NnError> {
        if head.input_dim() != state_layer.output_dim() + ACTION_DIM || head.output_dim() != 1 {
            return Err(NnError::ArchitectureMismatch);
        }
        Ok(Self { state_layer, head })
    }

    pub fn state_layer(&self) -> &Mlp {
        &self.state_layer
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn state_layer_mut(&mut self) -> &mut Mlp {
        &mut self.state_layer
    }

    pub fn head_mut(&mut self) -> &mut Mlp {
        &mut self.head
    }

    pub fn state_dim(&self) -> usize {
        self.state_layer.input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.state_layer.param_count() + self.head.param_count()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.state_layer.params().chain(self.head.params())
    }

    fn check(&self, states: &Matrix, actions: &Matrix) -> Result<(), NnError> {
        if actions.cols() != ACTION_DIM || actions.rows() != states.rows() {
            return Err(NnError::DimensionMismatch {
                expected: ACTION_DIM,
                actual: actions.cols(),
            });
        }
        Ok(())
    }

    /// Q-values, one row per sample.
    pub fn predict(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix, NnError> {
        self.check(states, actions)?;
        let h = self.state_layer.predict(states)?;
        self.head.predict(&h.hconcat(actions))
    }

    pub fn q(&self, state: &[f64], action: [f64; 2]) -> Result<f64, NnError> {
        let q = self.predict(
            &Matrix::from_vec(1, state.len(), state.to_vec()),
            &Matrix::from_vec(1, ACTION_DIM, action.to_vec()),
        )?;
        Ok(q.get(0, 0))
    }

    pub fn forward_batch(&self, states: &Matrix, actions: &Matrix) -> Result<CriticCache, NnError> {
        self.check(states, actions)?;
        let state = self.state_layer.forward_batch(states)?;
        let head = self.head.forward_batch(&state.output().hconcat(actions))?;
        Ok(CriticCache { state, head })
    }

    /// Parameter gradients plus the gradients with respect to the states and
    /// the actions.
    pub fn backward(&self, cache: &CriticCache, dq: &Matrix) -> Result<(CriticGradients, Matrix, Matrix), NnError> {
        let (head, d_joined) = self.head.backward(&cache.head, dq)?;
        let (d_hidden, d_action) = d_joined.split_cols(self.state_layer.output_dim());
        let (state_layer, d_state) = self.state_layer.backward(&cache.state, &d_hidden)?;
        Ok((CriticGradients { state_layer, head }, d_state, d_action))
    }

    pub fn polyak_from(&mut self, online: &Critic, tau: f64) -> Result<(), NnError> {
        crate::nn::polyak_update(&mut self.state_layer, &online.state_layer, tau)?;
        crate::nn::polyak_update(&mut self.head, &online.head, tau)
    }
}
