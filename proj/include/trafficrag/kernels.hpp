#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafficrag/matrix.hpp"

namespace trafficrag {

using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// RMSNorm
// ---------------------------------------------------------------------------

struct RmsNormParams {
    Vector gamma;            // length of x, or length 1 for scalar broadcast
    double epsilon = 1e-6;
};

inline Vector rmsnorm(const Vector& x, const RmsNormParams& p) {
    if (x.empty()) throw KernelError("rmsnorm: empty input");
    if (p.gamma.size() != x.size() && p.gamma.size() != 1)
        throw KernelError("rmsnorm: gamma length mismatch");
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    const double scale = 1.0 / std::sqrt(ms + p.epsilon);
    Vector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double g = p.gamma.size() == 1 ? p.gamma[0] : p.gamma[i];
        out[i] = x[i] * scale * g;
    }
    return out;
}

// Backward pass for loss L with upstream gradient dL/dout = grad_out.
// Returns gradients wrt x and gamma.
struct RmsNormGrads {
    Vector x;
    Vector gamma;
};

inline RmsNormGrads rmsnorm_backward(const Vector& x, const RmsNormParams& p,
                                     const Vector& grad_out) {
    const std::size_t n = x.size();
    if (grad_out.size() != n) throw KernelError("rmsnorm_backward: grad length mismatch");
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(n);
    const double s = std::sqrt(ms + p.epsilon);
    auto gamma_at = [&](std::size_t i) { return p.gamma.size() == 1 ? p.gamma[0] : p.gamma[i]; };

    double dot = 0.0;  // sum_i g_i * gamma_i * x_i
    for (std::size_t i = 0; i < n; ++i) dot += grad_out[i] * gamma_at(i) * x[i];

    RmsNormGrads g;
    g.x.resize(n);
    for (std::size_t j = 0; j < n; ++j)
        g.x[j] = grad_out[j] * gamma_at(j) / s -
                 dot * x[j] / (static_cast<double>(n) * s * s * s);
    if (p.gamma.size() == 1) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += grad_out[i] * x[i] / s;
        g.gamma = {acc};
    } else {
        g.gamma.resize(n);
        for (std::size_t i = 0; i < n; ++i) g.gamma[i] = grad_out[i] * x[i] / s;
    }
    return g;
}

// ---------------------------------------------------------------------------
// SwiGLU feed-forward
// ---------------------------------------------------------------------------

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double swish(double z, double beta) { return z * sigmoid(beta * z); }
inline double swish_deriv(double z, double beta) {
    const double s = sigmoid(beta * z);
    return s + z * beta * s * (1.0 - s);
}

struct SwigluParams {
    Matrix w1;  // d x h
    Vector b1;  // h
    Matrix w2;  // d x h
    Vector b2;  // h
    double beta = 1.0;
};

inline void check_swiglu_shapes(const Vector& x, const SwigluParams& p) {
    const std::size_t d = x.size();
    if (p.w1.rows() != d || p.w2.rows() != d || p.w1.cols() != p.w2.cols() ||
        p.b1.size() != p.w1.cols() || p.b2.size() != p.w2.cols())
        throw KernelError("swiglu_ffn: shape mismatch");
}

// Swish(x W1 + b1) ⊗ (x W2 + b2)
inline Vector swiglu_ffn(const Vector& x, const SwigluParams& p) {
    check_swiglu_shapes(x, p);
    const std::size_t d = x.size();
    const std::size_t h = p.w1.cols();
    Vector out(h);
    for (std::size_t j = 0; j < h; ++j) {
        double u = p.b1[j];
        double v = p.b2[j];
        for (std::size_t i = 0; i < d; ++i) {
            u += x[i] * p.w1.at(i, j);
            v += x[i] * p.w2.at(i, j);
        }
        out[j] = swish(u, p.beta) * v;
    }
    return out;
}

struct SwigluGrads {
    Vector x;
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
};

inline SwigluGrads swiglu_backward(const Vector& x, const SwigluParams& p,
                                   const Vector& grad_out) {
    check_swiglu_shapes(x, p);
    const std::size_t d = x.size();
    const std::size_t h = p.w1.cols();
    if (grad_out.size() != h) throw KernelError("swiglu_backward: grad length mismatch");

    SwigluGrads g{Vector(d, 0.0), Matrix(d, h), Vector(h, 0.0), Matrix(d, h), Vector(h, 0.0)};
    for (std::size_t j = 0; j < h; ++j) {
        double u = p.b1[j];
        double v = p.b2[j];
        for (std::size_t i = 0; i < d; ++i) {
            u += x[i] * p.w1.at(i, j);
            v += x[i] * p.w2.at(i, j);
        }
        const double du = grad_out[j] * v * swish_deriv(u, p.beta);
        const double dv = grad_out[j] * swish(u, p.beta);
        g.b1[j] = du;
        g.b2[j] = dv;
        for (std::size_t i = 0; i < d; ++i) {
            g.w1.at(i, j) = x[i] * du;
            g.w2.at(i, j) = x[i] * dv;
            g.x[i] += du * p.w1.at(i, j) + dv * p.w2.at(i, j);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Four-group fusion MLP
// ---------------------------------------------------------------------------

enum class Activation { GELU, ReLU };

inline double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2)); }
inline double gelu_deriv(double z) {
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2)) + z * phi;
}
inline double activate(double z, Activation a) {
    return a == Activation::GELU ? gelu(z) : std::max(0.0, z);
}
inline double activate_deriv(double z, Activation a) {
    return a == Activation::GELU ? gelu_deriv(z) : (z > 0.0 ? 1.0 : 0.0);
}

struct FusionMlpParams {
    Matrix w1;  // 4d x h
    Vector b1;  // h
    Matrix w2;  // h x m
    Vector b2;  // m
    Activation activation = Activation::GELU;
};

// Groups of 4 consecutive patch rows concatenated into one row of width 4d.
inline Matrix group_concat4(const Matrix& patches) {
    if (patches.rows() % 4 != 0)
        throw KernelError("fusion_mlp: row count " + std::to_string(patches.rows()) +
                          " not divisible by 4");
    const std::size_t d = patches.cols();
    Matrix out(patches.rows() / 4, 4 * d);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t g = 0; g < 4; ++g)
            for (std::size_t c = 0; c < d; ++c)
                out.at(r, g * d + c) = patches.at(4 * r + g, c);
    return out;
}

inline Matrix fusion_mlp(const Matrix& patches, const FusionMlpParams& p) {
    Matrix f = group_concat4(patches);
    if (p.w1.rows() != f.cols() || p.b1.size() != p.w1.cols() ||
        p.w2.rows() != p.w1.cols() || p.b2.size() != p.w2.cols())
        throw KernelError("fusion_mlp: shape mismatch");
    Matrix hidden = matmul(f, p.w1);
    for (std::size_t r = 0; r < hidden.rows(); ++r)
        for (std::size_t c = 0; c < hidden.cols(); ++c)
            hidden.at(r, c) = activate(hidden.at(r, c) + p.b1[c], p.activation);
    Matrix out = matmul(hidden, p.w2);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += p.b2[c];
    return out;
}

struct FusionMlpGrads {
    Matrix patches;
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
};

inline FusionMlpGrads fusion_mlp_backward(const Matrix& patches, const FusionMlpParams& p,
                                          const Matrix& grad_out) {
    Matrix f = group_concat4(patches);
    const std::size_t h = p.w1.cols();
    Matrix pre(f.rows(), h);   // W1 pre-activations
    Matrix act(f.rows(), h);   // activated hidden
    {
        Matrix tmp = matmul(f, p.w1);
        for (std::size_t r = 0; r < tmp.rows(); ++r)
            for (std::size_t c = 0; c < h; ++c) {
                pre.at(r, c) = tmp.at(r, c) + p.b1[c];
                act.at(r, c) = activate(pre.at(r, c), p.activation);
            }
    }
    FusionMlpGrads g{Matrix(patches.rows(), patches.cols()), Matrix(p.w1.rows(), h),
                     Vector(h, 0.0), Matrix(h, p.w2.cols()), Vector(p.b2.size(), 0.0)};
    g.w2 = matmul(transpose(act), grad_out);
    for (std::size_t r = 0; r < grad_out.rows(); ++r)
        for (std::size_t c = 0; c < grad_out.cols(); ++c) g.b2[c] += grad_out.at(r, c);

    Matrix d_hidden = matmul(grad_out, transpose(p.w2));
    for (std::size_t r = 0; r < d_hidden.rows(); ++r)
        for (std::size_t c = 0; c < h; ++c)
            d_hidden.at(r, c) *= activate_deriv(pre.at(r, c), p.activation);

    g.w1 = matmul(transpose(f), d_hidden);
    for (std::size_t r = 0; r < d_hidden.rows(); ++r)
        for (std::size_t c = 0; c < h; ++c) g.b1[c] += d_hidden.at(r, c);

    Matrix d_f = matmul(d_hidden, transpose(p.w1));
    const std::size_t d = patches.cols();
    for (std::size_t r = 0; r < d_f.rows(); ++r)
        for (std::size_t grp = 0; grp < 4; ++grp)
            for (std::size_t c = 0; c < d; ++c)
                g.patches.at(4 * r + grp, c) = d_f.at(r, grp * d + c);
    return g;
}

// ---------------------------------------------------------------------------
// 2D rotary position embedding
// ---------------------------------------------------------------------------

// First half of the dims rotates by pos_h, second half by pos_w; within each
// half, consecutive pairs (x_{2i}, x_{2i+1}) rotate by pos * base^{-2i/half_dim}.
inline Vector rope_2d(const Vector& x, std::int64_t pos_h, std::int64_t pos_w,
                      double base = 10000.0) {
    if (x.size() % 4 != 0)
        throw KernelError("rope_2d: length " + std::to_string(x.size()) +
                          " not divisible by 4");
    const std::size_t half = x.size() / 2;
    Vector out(x.size());
    for (std::size_t part = 0; part < 2; ++part) {
        const double pos = static_cast<double>(part == 0 ? pos_h : pos_w);
        const std::size_t off = part * half;
        for (std::size_t i = 0; i < half / 2; ++i) {
            const double freq = std::pow(base, -2.0 * static_cast<double>(i) /
                                                   static_cast<double>(half));
            const double angle = pos * freq;
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            const double a = x[off + 2 * i];
            const double b = x[off + 2 * i + 1];
            out[off + 2 * i] = a * c - b * s;
            out[off + 2 * i + 1] = a * s + b * c;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// LoRA
// ---------------------------------------------------------------------------

enum class LoraTarget { Q, K, V, O };

struct LoraAdapter {
    std::size_t d = 0;      // projection dimension
    std::size_t r = 0;      // rank, must satisfy r < d
    Matrix a;               // d x r
    Matrix b;               // r x d
    LoraTarget target = LoraTarget::Q;
    double scale = 1.0;

    void validate() const {
        if (r == 0 || d == 0 || r >= d) throw KernelError("lora: requires 0 < r < d");
        if (a.rows() != d || a.cols() != r || b.rows() != r || b.cols() != d)
            throw KernelError("lora: factor shape mismatch");
    }
};

// Low-rank weight update composed from the thin factors; shape d x d, rank <= r.
inline Matrix lora_delta(const LoraAdapter& ad) {
    ad.validate();
    Matrix delta = matmul(ad.a, ad.b);
    if (ad.scale != 1.0)
        for (double& v : delta.data()) v *= ad.scale;
    return delta;
}

inline Matrix lora_apply(const Matrix& w0, const LoraAdapter& ad) {
    ad.validate();
    if (w0.rows() != ad.d || w0.cols() != ad.d)
        throw KernelError("lora_apply: base weight must be d x d");
    return add(w0, lora_delta(ad));
}

struct LoraParamCount {
    std::uint64_t adapted;  // 2 d r
    std::uint64_t full;     // d^2
};

inline LoraParamCount lora_param_count(std::uint64_t d, std::uint64_t r) {
    if (r >= d) throw KernelError("lora_param_count: requires r < d");
    return {2 * d * r, d * d};
}

// ---------------------------------------------------------------------------
// Gradient descent step and finite-difference oracle
// ---------------------------------------------------------------------------

inline Vector sgd_step(const Vector& theta, const Vector& grad, double eta) {
    if (theta.size() != grad.size()) throw KernelError("sgd_step: length mismatch");
    if (!(eta > 0.0)) throw KernelError("sgd_step: eta must be positive");
    Vector out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) out[i] = theta[i] - eta * grad[i];
    return out;
}

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h.
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x,
                               double h = 1e-5) {
    Vector g(x.size());
    Vector probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw KernelError("finite_diff_grad: non-finite function value");
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace trafficrag
