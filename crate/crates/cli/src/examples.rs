//! The two worked examples, generated as ordinary config files.

/// Market parameters shared by both examples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Market {
    pub strike: f64,
    pub rate: f64,
    pub sigma: f64,
}

impl Default for Market {
    fn default() -> Self {
        Market {
            strike: 100.0,
            rate: 0.05,
            sigma: 0.3,
        }
    }
}

impl Market {
    /// `2r / sigma^2`, the decay exponent of the GBM `phi`.
    pub fn k(&self) -> f64 {
        2.0 * self.rate / (self.sigma * self.sigma)
    }

    /// Exercise level of the perpetual put, `K / (1 + sigma^2 / 2r)`.
    pub fn put_threshold(&self) -> f64 {
        self.strike / (1.0 + 1.0 / self.k())
    }

    /// Largest cancellation penalty for which the seller still cancels somewhere.
    pub fn critical_penalty(&self) -> f64 {
        let s = 1.0 / self.k();
        s * self.strike / (1.0 + s).powf(1.0 + self.k())
    }

    /// First-order condition for the holder's exercise level `x` under penalty `delta`;
    /// zero at the solution.
    pub fn exercise_residual(&self, x: f64, delta: f64) -> f64 {
        let k = self.k();
        let u = x / self.strike;
        (1.0 + k) * (1.0 + delta / self.strike) * u - k - u.powf(1.0 + k)
    }

    fn header(&self) -> String {
        let k = self.strike;
        format!(
            "diffusion.kind = gbm\n\
             diffusion.rate = {}\n\
             diffusion.sigma = {}\n\
             diffusion.x_min = {}\n\
             diffusion.x_max = {}\n\
             const.K = {k}\n\
             grid.n = 4097\n\
             grid.spacing = uniform_x\n",
            self.rate,
            self.sigma,
            k / 1000.0,
            k * 4097.0 / 1000.0,
        )
    }
}

/// Perpetual American put on geometric Brownian motion.
pub fn put_config(m: &Market) -> String {
    format!(
        "# Perpetual American put on geometric Brownian motion.\n\
         {}\
         payoff.G = pos(K - x)\n\
         mc.x0 = {}\n\
         mc.laplace_y = {}\n\
         output.points = {}, {}, {}\n",
        m.header(),
        m.strike,
        m.strike / 2.0,
        0.6 * m.strike,
        m.strike,
        1.5 * m.strike,
    )
}

/// Cancellable (game) put: the writer may cancel at any time by paying the payoff plus `delta`.
pub fn israeli_put_config(m: &Market, delta: f64) -> String {
    format!(
        "# Perpetual cancellable put: the writer may cancel by paying the put payoff plus delta.\n\
         {}\
         const.delta = {delta}\n\
         payoff.G = pos(K - x)\n\
         payoff.H = pos(K - x) + delta\n\
         mc.x0 = {}\n\
         output.points = {}, {}, {}\n",
        m.header(),
        0.75 * m.strike,
        0.6 * m.strike,
        m.strike,
        1.5 * m.strike,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProblemConfig;

    #[test]
    fn generated_configs_parse() {
        let m = Market::default();
        let c = ProblemConfig::parse(&put_config(&m)).unwrap();
        assert_eq!((c.x_min, c.x_max), (Some(0.1), Some(409.7)));
        let c = ProblemConfig::parse(&israeli_put_config(&m, 0.5 * m.critical_penalty())).unwrap();
        assert!(c.h.is_some());
    }

    #[test]
    fn closed_forms() {
        let m = Market::default();
        assert!((m.put_threshold() - 100.0 / 1.9).abs() < 1e-12);
        let d = 0.5 * m.critical_penalty();
        let (lo, hi) = (
            m.exercise_residual(m.put_threshold(), d),
            m.exercise_residual(m.strike, d),
        );
        assert!(lo * hi < 0.0, "{lo} {hi}");
    }
}
