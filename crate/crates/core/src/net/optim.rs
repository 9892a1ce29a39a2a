use super::params::NetworkParameters;

/// Gradient descent with heavy-ball momentum:
/// `velocity = momentum * velocity + grads`, `params -= lr * velocity`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<NetworkParameters>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Sgd {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, params: &mut NetworkParameters, grads: &NetworkParameters) {
        let v = self.velocity.get_or_insert_with(|| grads.zeros_like());
        v.scale(self.momentum);
        v.add_scaled(grads, 1.0);
        params.add_scaled(v, -self.lr);
    }

    pub fn velocity(&self) -> Option<&NetworkParameters> {
        self.velocity.as_ref()
    }

    pub fn set_velocity(&mut self, velocity: NetworkParameters) {
        self.velocity = Some(velocity);
    }
}
