#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "addit/core.hpp"
#include "addit/latent.hpp"

namespace addit {

// Discrete rectified-flow schedule. sigmas has num_steps+1 entries, strictly
// decreasing from sigma=1 at the first node to sigma=0 at the terminal node.
// timesteps are the integer labels round(1000*sigma), so with the default
// linear 30-step schedule the familiar labels appear verbatim:
// 1000, 967, 933, 900, 867, ..., 500, ..., 0.
struct Schedule {
    int num_steps = 0;
    std::vector<double> sigmas;   // size num_steps+1
    std::vector<int> timesteps;   // size num_steps+1, descending

    static Schedule linear(int n) {
        require(n >= 1, "Schedule::linear: need at least one step");
        Schedule s;
        s.num_steps = n;
        s.sigmas.resize(n + 1);
        s.timesteps.resize(n + 1);
        for (int k = 0; k <= n; ++k) {
            s.sigmas[k] = 1.0 - static_cast<double>(k) / n;
            s.timesteps[k] = static_cast<int>(std::llround(1000.0 * s.sigmas[k]));
        }
        s.sigmas[n] = 0.0;
        s.validate();
        return s;
    }

    // Mobius time shift: sigma' = shift*sigma / (1 + (shift-1)*sigma).
    // Endpoints 0 and 1 are fixed points of the map.
    static Schedule shifted(int n, double shift) {
        require(shift > 0.0, "Schedule::shifted: shift must be positive");
        Schedule s = linear(n);
        for (int k = 0; k <= n; ++k) {
            const double u = s.sigmas[k];
            s.sigmas[k] = shift * u / (1.0 + (shift - 1.0) * u);
            s.timesteps[k] = static_cast<int>(std::llround(1000.0 * s.sigmas[k]));
        }
        s.validate();
        return s;
    }

    void validate() const {
        require(num_steps >= 1, "Schedule: num_steps must be positive");
        require(static_cast<int>(sigmas.size()) == num_steps + 1, "Schedule: sigmas size");
        require(static_cast<int>(timesteps.size()) == num_steps + 1, "Schedule: timesteps size");
        require(sigmas.front() == 1.0, "Schedule: initial sigma must be exactly 1");
        require(sigmas.back() == 0.0, "Schedule: terminal sigma must be exactly 0");
        for (int k = 0; k < num_steps; ++k)
            require(sigmas[k] > sigmas[k + 1], "Schedule: sigmas must be strictly decreasing");
        for (int k = 0; k <= num_steps; ++k)
            require(timesteps[k] >= 0 && timesteps[k] <= 1000, "Schedule: timestep label out of [0,1000]");
    }

    double sigma(std::size_t step) const {
        require(step < sigmas.size(), "Schedule: step index out of range");
        return sigmas[step];
    }

    int label(std::size_t step) const {
        require(step < timesteps.size(), "Schedule: step index out of range");
        return timesteps[step];
    }

    // Nearest-not-after lookup: the first step whose label does not exceed
    // the cutoff. Labels descend, so this is the largest label <= t_cutoff.
    std::size_t step_for(int t_cutoff) const {
        require(t_cutoff >= 0, "Schedule::step_for: negative cutoff");
        for (std::size_t k = 0; k < timesteps.size(); ++k)
            if (timesteps[k] <= t_cutoff) return k;
        throw contract_error("Schedule::step_for: no label at or below cutoff");
    }

    bool has_successor(std::size_t step) const { return step + 1 < sigmas.size(); }
};

// X_t = (1 - sigma_t) * x0 + sigma_t * eps.
inline Latent noise_to(const Latent& latent_clean, const NoiseSample& eps, std::size_t step,
                       const Schedule& sched) {
    require_same_shape(latent_clean, eps.values, "noise_to");
    const double s = sched.sigma(step);
    Latent out(latent_clean.height, latent_clean.width, latent_clean.dim, sched.label(step));
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = (1.0 - s) * latent_clean.data[i] + s * eps.values.data[i];
    return out;
}

// One-step estimate: x0 ~= x_t + (sigma_{t+1} - sigma_t) * v. A single Euler
// step, not the exact rectified-flow inversion below; both are kept, and the
// blending path uses this one.
inline Latent estimate_x0_step(const Latent& x_t, const Latent& velocity, std::size_t step,
                               const Schedule& sched) {
    require_same_shape(x_t, velocity, "estimate_x0_step");
    require(sched.has_successor(step), "estimate_x0_step: step has no successor");
    const double d = sched.sigma(step + 1) - sched.sigma(step);
    Latent out(x_t.height, x_t.width, x_t.dim, 0);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x_t.data[i] + d * velocity.data[i];
    return out;
}

// Exact inversion of x_t = (1-sigma)x0 + sigma*eps with v = eps - x0:
// x0 = x_t - sigma_t * v.
inline Latent estimate_x0_exact(const Latent& x_t, const Latent& velocity, std::size_t step,
                                const Schedule& sched) {
    require_same_shape(x_t, velocity, "estimate_x0_exact");
    const double s = sched.sigma(step);
    Latent out(x_t.height, x_t.width, x_t.dim, 0);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x_t.data[i] - s * velocity.data[i];
    return out;
}

// One explicit Euler step along the flow: x_{t+1} = x_t + (sigma_{t+1}-sigma_t)*v.
inline Latent euler_step(const Latent& x_t, const Latent& velocity, std::size_t step,
                         const Schedule& sched) {
    require_same_shape(x_t, velocity, "euler_step");
    require(sched.has_successor(step), "euler_step: step has no successor");
    const double d = sched.sigma(step + 1) - sched.sigma(step);
    Latent out(x_t.height, x_t.width, x_t.dim, sched.label(step + 1));
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x_t.data[i] + d * velocity.data[i];
    return out;
}

}  // namespace addit
