#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "addit/core.hpp"
#include "addit/latent.hpp"
#include "addit/schedule.hpp"

namespace addit {

// Finite point dataset with equal prior weights. Used as a closed-form
// velocity backend: for x_t = (1-sigma)x0 + sigma*eps over these points, the
// posterior over points and E[eps - x0 | x_t] are available in closed form,
// which makes full sampling runs numerically checkable.
struct OraclePointSet {
    std::vector<Latent> points;

    void validate() const {
        require(!points.empty(), "OraclePointSet: empty dataset");
        for (const auto& p : points)
            require(p.same_shape(points.front()), "OraclePointSet: point shapes differ");
    }
};

// Posterior weights w_i over dataset points given x_t at noise level sigma:
// w_i ∝ exp(-||x_t - (1-sigma)x_i||^2 / (2 sigma^2)), normalized to sum 1.
inline std::vector<double> oracle_posterior(const Latent& x_t, double sigma,
                                            const OraclePointSet& data) {
    data.validate();
    require(sigma > 0.0, "oracle_posterior: sigma must be positive");
    const std::size_t n = data.points.size();
    std::vector<double> logw(n);
    double max_logw = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const Latent& p = data.points[i];
        require_same_shape(x_t, p, "oracle_posterior");
        double d2 = 0.0;
        for (std::size_t j = 0; j < x_t.size(); ++j) {
            const double d = x_t.data[j] - (1.0 - sigma) * p.data[j];
            d2 += d * d;
        }
        logw[i] = -d2 / (2.0 * sigma * sigma);
        if (logw[i] > max_logw) max_logw = logw[i];
    }
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        logw[i] = std::exp(logw[i] - max_logw);
        z += logw[i];
    }
    for (std::size_t i = 0; i < n; ++i) logw[i] /= z;
    return logw;
}

// Closed-form velocity E[eps - x0 | x_t] = (x_t - sum_i w_i x_i) / sigma.
inline Latent oracle_velocity(const Latent& x_t, std::size_t step, const Schedule& sched,
                              const OraclePointSet& data) {
    const double sigma = sched.sigma(step);
    require(sigma > 0.0, "oracle_velocity: undefined at sigma = 0");
    const std::vector<double> w = oracle_posterior(x_t, sigma, data);
    Latent mean(x_t.height, x_t.width, x_t.dim, 0);
    for (std::size_t i = 0; i < data.points.size(); ++i) {
        const double wi = w[i];
        const auto& p = data.points[i].data;
        for (std::size_t j = 0; j < mean.size(); ++j) mean.data[j] += wi * p[j];
    }
    Latent v(x_t.height, x_t.width, x_t.dim, x_t.time_label);
    for (std::size_t j = 0; j < v.size(); ++j) v.data[j] = (x_t.data[j] - mean.data[j]) / sigma;
    return v;
}

}  // namespace addit
