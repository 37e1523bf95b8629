#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "deepesn/errors.hpp"
#include "deepesn/linalg.hpp"
#include "deepesn/matrix.hpp"
#include "deepesn/random.hpp"

namespace deepesn {

// Hyperparameters of a stacked leaky-integrator reservoir. Layers are
// 0-based in this API; layer 0 is driven by the external input.
struct DeepEsnConfig {
    std::size_t num_layers = 1;
    std::size_t units_per_layer = 10;
    std::vector<double> leak_rates{1.0}; // one per layer, in (0, 1]
    double input_scaling = 1.0;         // ||W_in||_2
    double inter_layer_scaling = 1.0;   // ||W^(l)||_2, l >= 1
    double spectral_radius = 0.9;       // target for (1-a)I + a W_hat, in (0, 1]
    std::size_t input_dim = 4;
    std::uint64_t master_seed = 0;

    static DeepEsnConfig uniform_leak(std::size_t layers, std::size_t units, double leak) {
        DeepEsnConfig c;
        c.num_layers = layers;
        c.units_per_layer = units;
        c.leak_rates.assign(layers, leak);
        return c;
    }

    void validate() const {
        if (num_layers < 1) throw InputError("DeepEsnConfig: num_layers must be >= 1");
        if (units_per_layer < 1) throw InputError("DeepEsnConfig: units_per_layer must be >= 1");
        if (input_dim < 1) throw InputError("DeepEsnConfig: input_dim must be >= 1");
        if (leak_rates.size() != num_layers)
            throw InputError("DeepEsnConfig: " + std::to_string(leak_rates.size()) +
                             " leak rates for " + std::to_string(num_layers) + " layers");
        for (double a : leak_rates)
            if (!(a > 0.0 && a <= 1.0)) throw InputError("DeepEsnConfig: leak rate outside (0, 1]");
        if (!(input_scaling > 0.0)) throw InputError("DeepEsnConfig: input scaling must be > 0");
        if (!(inter_layer_scaling > 0.0))
            throw InputError("DeepEsnConfig: inter-layer scaling must be > 0");
        if (!(spectral_radius > 0.0 && spectral_radius <= 1.0))
            throw InputError("DeepEsnConfig: spectral radius outside (0, 1]");
    }

    std::size_t state_dim() const noexcept { return num_layers * units_per_layer; }

    friend bool operator==(const DeepEsnConfig&, const DeepEsnConfig&) = default;
};

struct ReservoirStack {
    DeepEsnConfig config;
    Matrix w_in;                // N_R x N_U
    std::vector<Matrix> w_hat;  // per layer, N_R x N_R
    std::vector<Matrix> w_inter; // w_inter[l - 1] feeds layer l from layer l - 1, l >= 1
    std::uint32_t redraws = 0;  // degenerate draws replaced during construction

    const Matrix& inter(std::size_t layer) const {
        if (layer == 0 || layer >= config.num_layers)
            throw IndexError("inter-layer matrix requested for layer " + std::to_string(layer));
        return w_inter[layer - 1];
    }

    friend bool operator==(const ReservoirStack&, const ReservoirStack&) = default;
};

// (1 - a) I + a W_hat for one layer.
inline Matrix effective_recurrence(const ReservoirStack& stack, std::size_t layer) {
    const double a = stack.config.leak_rates.at(layer);
    Matrix m = a * stack.w_hat.at(layer);
    for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += 1.0 - a;
    return m;
}

namespace detail {

inline constexpr std::uint32_t max_redraws = 16;

inline std::uint64_t attempt_seed(std::uint64_t master, std::uint32_t attempt) {
    return attempt == 0 ? master : mix_seed(master, 0x7265647261770000ULL + attempt);
}

inline Matrix scaled_to_norm(Matrix m, double target, IterationControl ctl) {
    const double norm = spectral_norm(m, ctl);
    if (!(norm > 0.0)) throw ConstructionError("random matrix with zero spectral norm");
    m *= target / norm;
    return m;
}

} // namespace detail

// Draws every matrix from its own sub-stream, then rescales: W_in to spectral
// norm sigma, each inter-layer matrix to sigma_hat, and each recurrent matrix
// so that rho((1 - a) I + a W_hat) equals the target radius exactly.
// A draw with a degenerate effective matrix is replaced from a perturbed
// master seed; the replacement is logged to std::clog and counted.
inline ReservoirStack build_stack(const DeepEsnConfig& config, IterationControl ctl = {}) {
    config.validate();
    const std::size_t nr = config.units_per_layer;
    for (std::uint32_t attempt = 0; attempt <= detail::max_redraws; ++attempt) {
        const std::uint64_t seed = detail::attempt_seed(config.master_seed, attempt);
        try {
            ReservoirStack s;
            s.config = config;
            s.redraws = attempt;
            s.w_in = detail::scaled_to_norm(
                uniform_matrix({seed, 1, MatrixRole::Input}, nr, config.input_dim), config.input_scaling, ctl);
            for (std::size_t l = 0; l < config.num_layers; ++l) {
                const auto layer_index = static_cast<std::uint32_t>(l + 1);
                const double a = config.leak_rates[l];
                Matrix m = a * uniform_matrix({seed, layer_index, MatrixRole::Recurrent}, nr, nr);
                for (std::size_t i = 0; i < nr; ++i) m(i, i) += 1.0 - a;
                const double rho_raw = spectral_radius(m, ctl);
                if (!(rho_raw > 0.0))
                    throw ConstructionError("effective recurrent matrix of layer " + std::to_string(l) +
                                            " has zero spectral radius");
                m *= config.spectral_radius / rho_raw;
                for (std::size_t i = 0; i < nr; ++i) m(i, i) -= 1.0 - a;
                m *= 1.0 / a;
                s.w_hat.push_back(std::move(m));
                if (l > 0)
                    s.w_inter.push_back(detail::scaled_to_norm(
                        uniform_matrix({seed, layer_index, MatrixRole::InterLayer}, nr, nr),
                        config.inter_layer_scaling, ctl));
            }
            return s;
        } catch (const ConstructionError& e) {
            std::clog << "deepesn: degenerate reservoir draw (seed " << config.master_seed << ", attempt "
                      << attempt << "): " << e.what() << "; redrawing\n";
        }
    }
    throw ConstructionError("build_stack: no usable draw after " + std::to_string(detail::max_redraws) +
                            " redraws");
}

namespace detail {

inline void check_len(std::span<const double> v, std::size_t n, const char* what) {
    if (v.size() != n)
        throw DimensionError(std::string(what) + " has length " + std::to_string(v.size()) + ", expected " +
                             std::to_string(n));
}

// x <- (1 - a) x_prev + a tanh(drive_matrix * drive + w_hat * x_prev)
inline void leaky_update(double a, const Matrix& drive_matrix, std::span<const double> drive,
                         const Matrix& w_hat, std::span<const double> x_prev, std::span<double> out,
                         std::span<double> scratch) {
    multiply_into(drive_matrix, drive, out);
    multiply_into(w_hat, x_prev, scratch);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (1.0 - a) * x_prev[i] + a * std::tanh(out[i] + scratch[i]);
}

} // namespace detail

inline std::vector<double> step_first_layer(const ReservoirStack& stack, std::span<const double> x_prev,
                                            std::span<const double> u) {
    const std::size_t nr = stack.config.units_per_layer;
    detail::check_len(x_prev, nr, "layer-0 state");
    detail::check_len(u, stack.config.input_dim, "input vector");
    std::vector<double> out(nr), scratch(nr);
    detail::leaky_update(stack.config.leak_rates[0], stack.w_in, u, stack.w_hat[0], x_prev, out, scratch);
    return out;
}

// x_below is the state of layer - 1 at the same time step.
inline std::vector<double> step_higher_layer(const ReservoirStack& stack, std::size_t layer,
                                             std::span<const double> x_prev, std::span<const double> x_below) {
    if (layer == 0 || layer >= stack.config.num_layers)
        throw IndexError("step_higher_layer: layer " + std::to_string(layer) + " outside 1.." +
                         std::to_string(stack.config.num_layers - 1));
    const std::size_t nr = stack.config.units_per_layer;
    detail::check_len(x_prev, nr, "layer state");
    detail::check_len(x_below, nr, "lower layer state");
    std::vector<double> out(nr), scratch(nr);
    detail::leaky_update(stack.config.leak_rates[layer], stack.inter(layer), x_below, stack.w_hat[layer], x_prev,
                         out, scratch);
    return out;
}

struct RunOptions {
    std::size_t washout = 0;     // leading steps excluded from the mean
    bool record_states = false;  // keep the full concatenated time course
};

struct RunResult {
    std::vector<double> mean_state;  // chi, length N_L * N_R, layer-major
    std::vector<double> final_state; // x(n)
    Matrix states;                   // n x (N_L * N_R) when recorded
};

// Runs the stack over inputs (N_U x n, one column per step) from the given
// concatenated initial state. Within a step the layers update bottom-up, so
// layer l sees layer l - 1 at the current step.
inline RunResult run_from(const ReservoirStack& stack, const Matrix& inputs, std::span<const double> initial,
                          RunOptions opts = {}) {
    const auto& cfg = stack.config;
    const std::size_t nr = cfg.units_per_layer, nl = cfg.num_layers, dim = cfg.state_dim();
    const std::size_t n = inputs.cols();
    if (inputs.rows() != cfg.input_dim)
        throw DimensionError("run: input has " + std::to_string(inputs.rows()) + " channels, reservoir expects " +
                             std::to_string(cfg.input_dim));
    if (n == 0) throw InputError("run: empty sequence");
    if (opts.washout >= n)
        throw InputError("run: washout " + std::to_string(opts.washout) + " leaves no steps of " +
                         std::to_string(n));
    detail::check_len(initial, dim, "initial state");

    RunResult r;
    r.mean_state.assign(dim, 0.0);
    if (opts.record_states) r.states = Matrix(n, dim);
    std::vector<double> prev(initial.begin(), initial.end()), cur(dim), scratch(nr), u(cfg.input_dim);

    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t c = 0; c < cfg.input_dim; ++c) u[c] = inputs(c, t);
        std::span<const double> pv(prev);
        std::span<double> cv(cur);
        detail::leaky_update(cfg.leak_rates[0], stack.w_in, u, stack.w_hat[0], pv.subspan(0, nr),
                             cv.subspan(0, nr), scratch);
        for (std::size_t l = 1; l < nl; ++l)
            detail::leaky_update(cfg.leak_rates[l], stack.w_inter[l - 1], cv.subspan((l - 1) * nr, nr),
                                 stack.w_hat[l], pv.subspan(l * nr, nr), cv.subspan(l * nr, nr), scratch);
        if (t >= opts.washout)
            for (std::size_t i = 0; i < dim; ++i) r.mean_state[i] += cur[i];
        if (opts.record_states) std::copy(cur.begin(), cur.end(), r.states.row(t).begin());
        std::swap(prev, cur);
    }
    const double inv = 1.0 / static_cast<double>(n - opts.washout);
    for (double& v : r.mean_state) v *= inv;
    r.final_state = std::move(prev);
    return r;
}

// Zero initial state; chi(s) is the mean of the concatenated states.
inline RunResult run_sequence(const ReservoirStack& stack, const Matrix& inputs, RunOptions opts = {}) {
    const std::vector<double> zero(stack.config.state_dim(), 0.0);
    return run_from(stack, inputs, zero, opts);
}

} // namespace deepesn
