#pragma once

// Neural building blocks on top of the tensor substrate: named parameter
// sets, MLP and GRU-cell forward passes, SGD/Adam steps, a finite-difference
// gradient checker, and a binary checkpoint format with exact round-trip.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "resgen/errors.hpp"
#include "resgen/rng.hpp"
#include "resgen/tensor.hpp"

namespace resgen {

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid };

inline Tensor apply_activation(const Tensor& t, Activation a) {
    switch (a) {
        case Activation::kIdentity: return t;
        case Activation::kRelu: return relu(t);
        case Activation::kTanh: return tanh(t);
        case Activation::kSigmoid: return sigmoid(t);
    }
    throw ConfigError("unknown activation");
}

inline Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::kIdentity;
    if (name == "relu") return Activation::kRelu;
    if (name == "tanh") return Activation::kTanh;
    if (name == "sigmoid") return Activation::kSigmoid;
    throw ConfigError("unknown activation name: " + name);
}

/// Layer widths [in, w1, ..., wL] plus one activation per layer.
struct MlpSpec {
    std::vector<std::size_t> widths;
    std::vector<Activation> activations;

    MlpSpec() = default;
    MlpSpec(std::vector<std::size_t> w, std::vector<Activation> a)
        : widths(std::move(w)), activations(std::move(a)) {
        validate();
    }
    /// Hidden layers use `hidden`, the last layer uses `out`.
    MlpSpec(std::vector<std::size_t> w, Activation hidden, Activation out)
        : widths(std::move(w)) {
        if (widths.size() < 2) throw ConfigError("mlp: need at least one layer");
        activations.assign(widths.size() - 2, hidden);
        activations.push_back(out);
        validate();
    }

    std::size_t layer_count() const { return activations.size(); }
    std::size_t input_width() const { return widths.front(); }
    std::size_t output_width() const { return widths.back(); }

    void validate() const {
        if (widths.size() < 2 || activations.size() != widths.size() - 1)
            throw ConfigError("mlp: widths/activations mismatch");
        for (auto w : widths)
            if (w == 0) throw ConfigError("mlp: zero layer width");
    }
};

struct GruCellSpec {
    std::size_t input_width = 0;
    std::size_t state_width = 0;

    void validate() const {
        if (input_width == 0 || state_width == 0)
            throw ConfigError("gru: widths must be positive");
    }
};

/// Named trainable tensors with deterministic (sorted-name) iteration order.
class ParamSet {
public:
    Tensor& add(const std::string& name, std::vector<std::size_t> shape,
                std::vector<double> values = {}) {
        if (params_.count(name)) throw ConfigError("duplicate parameter: " + name);
        auto [it, ok] = params_.emplace(name, Tensor::param(std::move(shape), std::move(values)));
        (void)ok;
        return it->second;
    }

    const Tensor& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    Tensor& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    std::map<std::string, Tensor>& all() { return params_; }
    const std::map<std::string, Tensor>& all() const { return params_; }

    std::size_t tensor_count() const { return params_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [k, v] : params_) n += v.size();
        return n;
    }

    void zero_grad() {
        for (auto& [k, v] : params_) v.zero_grad();
    }

    /// Copies values from another set; shapes and names must match exactly.
    void load_values(const ParamSet& other) {
        if (other.params_.size() != params_.size())
            throw ShapeError("parameter set mismatch: different tensor counts");
        for (auto& [name, tensor] : params_) {
            const Tensor& src = other.at(name);
            if (src.shape() != tensor.shape())
                throw ShapeError("parameter shape mismatch: " + name);
            tensor.mutable_values() = src.values();
        }
    }

    ParamSet clone_values() const {
        ParamSet out;
        for (const auto& [name, tensor] : params_)
            out.add(name, tensor.shape(), tensor.values());
        return out;
    }

private:
    std::map<std::string, Tensor> params_;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Uniform in +/- sqrt(6 / (fan_in + fan_out)).
inline std::vector<double> glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return v;
}

inline void init_mlp(ParamSet& params, const std::string& prefix, const MlpSpec& spec,
                     Rng& rng) {
    spec.validate();
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        std::size_t in = spec.widths[l], out = spec.widths[l + 1];
        params.add(prefix + ".w" + std::to_string(l), {in, out}, glorot_uniform(in, out, rng));
        params.add(prefix + ".b" + std::to_string(l), {1, out});
    }
}

inline void init_gru(ParamSet& params, const std::string& prefix, const GruCellSpec& spec,
                     Rng& rng) {
    spec.validate();
    std::size_t in = spec.input_width, st = spec.state_width;
    for (const char* gate : {"r", "z", "c"}) {
        params.add(prefix + ".w" + gate, {in, st}, glorot_uniform(in, st, rng));
        params.add(prefix + ".u" + gate, {st, st}, glorot_uniform(st, st, rng));
        params.add(prefix + ".b" + gate, {1, st});
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

inline Tensor mlp_forward(const MlpSpec& spec, const ParamSet& params,
                          const std::string& prefix, const Tensor& input) {
    if (input.shape().size() != 2 || input.cols() != spec.input_width())
        throw ShapeError("mlp " + prefix + ": input width " + std::to_string(input.cols()) +
                         " does not match spec width " + std::to_string(spec.input_width()));
    Tensor x = input;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        x = linear(x, params.at(prefix + ".w" + std::to_string(l)),
                   params.at(prefix + ".b" + std::to_string(l)));
        x = apply_activation(x, spec.activations[l]);
    }
    return x;
}

/// Batched GRU update. Update gate 0 keeps the old state, 1 takes the
/// candidate: h' = (1 - u) . h + u . c.
inline Tensor gru_cell(const GruCellSpec& spec, const ParamSet& params,
                       const std::string& prefix, const Tensor& state,
                       const Tensor& message) {
    if (state.shape().size() != 2 || state.cols() != spec.state_width)
        throw ShapeError("gru " + prefix + ": state width mismatch");
    if (message.shape().size() != 2 || message.cols() != spec.input_width ||
        message.rows() != state.rows())
        throw ShapeError("gru " + prefix + ": message shape mismatch");
    auto gate_pre = [&](const char* g, const Tensor& h_in) {
        return add_rows(matmul(message, params.at(prefix + ".w" + g)) +
                            matmul(h_in, params.at(prefix + ".u" + g)),
                        params.at(prefix + ".b" + g));
    };
    Tensor r = sigmoid(gate_pre("r", state));
    Tensor u = sigmoid(gate_pre("z", state));
    Tensor c = tanh(gate_pre("c", r * state));
    return (affine(u, -1.0, 1.0) * state) + (u * c);
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct OptimizerRule {
    enum class Kind { kSgd, kAdam };
    Kind kind = Kind::kAdam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerRule sgd(double lr) { return {Kind::kSgd, lr, 0, 0, 0}; }
    static OptimizerRule adam(double lr, double b1 = 0.9, double b2 = 0.999,
                              double eps = 1e-8) {
        return {Kind::kAdam, lr, b1, b2, eps};
    }
};

/// Applies a gradient step and zeroes gradients. Adam state is keyed by
/// parameter name, so the set may grow between steps.
class Optimizer {
public:
    explicit Optimizer(OptimizerRule rule) : rule_(rule) {}

    void step(ParamSet& params) {
        ++t_;
        for (auto& [name, tensor] : params.all()) {
            auto& values = tensor.mutable_values();
            auto& nd = tensor.node();
            if (nd.grad.size() != values.size()) nd.grad.assign(values.size(), 0.0);
            for (double g : nd.grad)
                if (!std::isfinite(g))
                    throw TrainingError("non-finite gradient in parameter " + name);
            if (rule_.kind == OptimizerRule::Kind::kSgd) {
                for (std::size_t i = 0; i < values.size(); ++i)
                    values[i] -= rule_.lr * nd.grad[i];
            } else {
                auto& m = moment1_[name];
                auto& v = moment2_[name];
                if (m.size() != values.size()) m.assign(values.size(), 0.0);
                if (v.size() != values.size()) v.assign(values.size(), 0.0);
                double bc1 = 1.0 - std::pow(rule_.beta1, static_cast<double>(t_));
                double bc2 = 1.0 - std::pow(rule_.beta2, static_cast<double>(t_));
                for (std::size_t i = 0; i < values.size(); ++i) {
                    double g = nd.grad[i];
                    m[i] = rule_.beta1 * m[i] + (1.0 - rule_.beta1) * g;
                    v[i] = rule_.beta2 * v[i] + (1.0 - rule_.beta2) * g * g;
                    double mhat = m[i] / bc1;
                    double vhat = v[i] / bc2;
                    values[i] -= rule_.lr * mhat / (std::sqrt(vhat) + rule_.eps);
                }
            }
            for (double x : values)
                if (!std::isfinite(x))
                    throw TrainingError("non-finite value in parameter " + name +
                                        " after update");
            std::fill(nd.grad.begin(), nd.grad.end(), 0.0);
        }
    }

    long step_count() const { return t_; }

private:
    OptimizerRule rule_;
    long t_ = 0;
    std::map<std::string, std::vector<double>> moment1_, moment2_;
};

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradientCheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t coords_checked = 0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Central finite differences, step 1e-5 per coordinate. `loss_fn` must be a
/// deterministic scalar function of the current parameter values. Relative
/// error uses denominator max(|analytic|, |numeric|, 1).
inline GradientCheckReport gradient_check(const std::function<Tensor()>& loss_fn,
                                          ParamSet& params, double tolerance,
                                          double step = 1e-5) {
    GradientCheckReport report;
    report.tolerance = tolerance;

    params.zero_grad();
    Tensor loss = loss_fn();
    if (loss.size() != 1) throw ShapeError("gradient_check: loss must be scalar");
    loss.backward();
    std::map<std::string, std::vector<double>> analytic;
    for (auto& [name, tensor] : params.all()) {
        auto& nd = tensor.node();
        if (nd.grad.size() != tensor.size()) nd.grad.assign(tensor.size(), 0.0);
        analytic[name] = nd.grad;
    }

    NoGradGuard guard;
    for (auto& [name, tensor] : params.all()) {
        auto& values = tensor.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            double saved = values[i];
            values[i] = saved + step;
            double fp = loss_fn().item();
            values[i] = saved - step;
            double fm = loss_fn().item();
            values[i] = saved;
            double numeric = (fp - fm) / (2.0 * step);
            double a = analytic[name][i];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
            double rel = std::fabs(a - numeric) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_parameter = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
// Layout: magic "RGCK", u32 version, u32 metadata length, metadata bytes,
// u64 tensor count, per tensor {u32 name length, name, u32 ndim, u64 dims...},
// then all payloads as row-major f64 in manifest order.

namespace detail {

static_assert(sizeof(double) == 8, "checkpoint format requires 64-bit doubles");

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("checkpoint: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}
inline void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
}
inline double read_f64(std::istream& is) {
    std::uint64_t bits = read_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

constexpr char kCheckpointMagic[4] = {'R', 'G', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamSet& params,
                            const std::string& metadata = "") {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(detail::kCheckpointMagic, 4);
    detail::write_u32(os, detail::kCheckpointVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(metadata.size()));
    os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    detail::write_u64(os, params.tensor_count());
    for (const auto& [name, tensor] : params.all()) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(tensor.shape().size()));
        for (auto d : tensor.shape()) detail::write_u64(os, d);
    }
    for (const auto& [name, tensor] : params.all())
        for (double d : tensor.values()) detail::write_f64(os, d);
    if (!os) throw IoError("checkpoint write failed: " + path);
}

struct Checkpoint {
    ParamSet params;
    std::string metadata;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw ParseError("not a checkpoint file: " + path);
    std::uint32_t version = detail::read_u32(is);
    if (version != detail::kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    std::uint32_t meta_len = detail::read_u32(is);
    std::string metadata(meta_len, '\0');
    is.read(metadata.data(), meta_len);
    if (!is) throw IoError("checkpoint: truncated metadata");
    std::uint64_t count = detail::read_u64(is);
    std::vector<std::pair<std::string, std::vector<std::size_t>>> manifest;
    manifest.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw IoError("checkpoint: truncated manifest");
        std::uint32_t ndim = detail::read_u32(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(detail::read_u64(is));
        manifest.emplace_back(std::move(name), std::move(shape));
    }
    Checkpoint ck;
    ck.metadata = std::move(metadata);
    for (auto& [name, shape] : manifest) {
        std::size_t total = 1;
        for (auto d : shape) total *= d;
        std::vector<double> values(total);
        for (auto& v : values) v = detail::read_f64(is);
        ck.params.add(name, shape, std::move(values));
    }
    return ck;
}

}  // namespace resgen
