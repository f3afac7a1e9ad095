#pragma once

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "trafficrag/kernels.hpp"

namespace trafficrag {

struct SelftestResult {
    std::string name;
    bool passed;
    std::string detail;
};

namespace selftest_detail {

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

inline double max_rel_err(const Vector& a, const Vector& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
    return worst;
}

inline Vector random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Vector v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& x : m.data()) x = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    return m;
}

}  // namespace selftest_detail

// Runs the full kernels invariant suite. Each entry is independent; a failure
// in one check does not stop the others.
inline std::vector<SelftestResult> run_kernel_selftest(std::uint64_t seed = 20240901) {
    using namespace selftest_detail;
    std::vector<SelftestResult> results;
    auto record = [&](const std::string& name, bool ok, const std::string& detail = "") {
        results.push_back({name, ok, detail});
    };

    // RMSNorm scale invariance at epsilon = 0.
    {
        std::mt19937_64 rng(seed);
        bool ok = true;
        for (int it = 0; it < 50 && ok; ++it) {
            Vector x = random_vector(rng, 8);
            RmsNormParams p{random_vector(rng, 8), 0.0};
            Vector base = rmsnorm(x, p);
            Vector scaled_in = x;
            const double alpha = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
            for (double& v : scaled_in) v *= alpha;
            Vector scaled = rmsnorm(scaled_in, p);
            if (max_rel_err(base, scaled) > 1e-12) ok = false;
        }
        record("rmsnorm scale invariance (eps=0)", ok);
    }

    // RMSNorm hand value: x=(3,4), gamma=1, eps=0, mean(x^2)=12.5.
    {
        Vector out = rmsnorm({3.0, 4.0}, {{1.0}, 0.0});
        const double s = std::sqrt(12.5);
        bool ok = rel_err(out[0], 3.0 / s) < 1e-12 && rel_err(out[1], 4.0 / s) < 1e-12;
        record("rmsnorm hand-computed value", ok);
    }

    // SwiGLU hand value: d=h=1, W1=W2=1, b=0, x=1 -> sigmoid(1).
    {
        SwigluParams p{Matrix(1, 1, {1.0}), {0.0}, Matrix(1, 1, {1.0}), {0.0}, 1.0};
        Vector out = swiglu_ffn({1.0}, p);
        record("swiglu hand-computed value", rel_err(out[0], sigmoid(1.0)) < 1e-12);
    }

    // RoPE isometry over 100 seeded cases.
    {
        std::mt19937_64 rng(seed + 1);
        bool ok = true;
        for (int it = 0; it < 100 && ok; ++it) {
            Vector x = random_vector(rng, 16);
            std::uniform_int_distribution<std::int64_t> posd(0, 128);
            Vector y = rope_2d(x, posd(rng), posd(rng));
            double nx = 0.0, ny = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                nx += x[i] * x[i];
                ny += y[i] * y[i];
            }
            if (std::fabs(std::sqrt(nx) - std::sqrt(ny)) > 1e-12) ok = false;
        }
        record("rope_2d isometry", ok);
    }

    // RoPE relative-position property over 100 seeded cases.
    {
        std::mt19937_64 rng(seed + 2);
        bool ok = true;
        for (int it = 0; it < 100 && ok; ++it) {
            Vector q = random_vector(rng, 16);
            Vector k = random_vector(rng, 16);
            std::uniform_int_distribution<std::int64_t> posd(0, 64);
            const std::int64_t h1 = posd(rng), w1 = posd(rng), h2 = posd(rng), w2 = posd(rng);
            const std::int64_t dh = posd(rng), dw = posd(rng);
            auto dot = [](const Vector& a, const Vector& b) {
                double acc = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
                return acc;
            };
            const double d1 = dot(rope_2d(q, h1, w1), rope_2d(k, h2, w2));
            const double d2 = dot(rope_2d(q, h1 + dh, w1 + dw), rope_2d(k, h2 + dh, w2 + dw));
            if (std::fabs(d1 - d2) > 1e-10) ok = false;
        }
        record("rope_2d relative-position dot product", ok);
    }

    // LoRA rank bound over 100 random adapters.
    {
        std::mt19937_64 rng(seed + 3);
        bool ok = true;
        for (int it = 0; it < 100 && ok; ++it) {
            std::uniform_int_distribution<std::size_t> dd(4, 12);
            const std::size_t d = dd(rng);
            std::uniform_int_distribution<std::size_t> rd(1, d - 1);
            const std::size_t r = rd(rng);
            LoraAdapter ad{d, r, random_matrix(rng, d, r), random_matrix(rng, r, d)};
            std::vector<double> sv = singular_values(lora_delta(ad));
            for (std::size_t i = r; i < sv.size(); ++i)
                if (sv[i] > 1e-10) ok = false;
        }
        record("lora rank(delta) <= r", ok);
    }

    // LoRA parameter count formula.
    {
        auto c1 = lora_param_count(64, 4);
        auto c2 = lora_param_count(4096, 8);
        bool ok = c1.adapted == 512 && c1.full == 4096 && c2.adapted == 65536 &&
                  c2.full == 16777216;
        record("lora parameter count 2dr vs d^2", ok);
    }

    // Gradient checks: analytic vs central finite differences, 20 instances each.
    const double grad_tol = 1e-4;
    {
        std::mt19937_64 rng(seed + 4);
        double worst = 0.0;
        for (int it = 0; it < 20; ++it) {
            const std::size_t n = 6;
            Vector x = random_vector(rng, n, -2.0, 2.0);
            RmsNormParams p{random_vector(rng, n, 0.5, 1.5), 1e-6};
            Vector up = random_vector(rng, n);
            auto loss_x = [&](const Vector& xv) {
                Vector o = rmsnorm(xv, p);
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += up[i] * o[i];
                return acc;
            };
            auto loss_g = [&](const Vector& gv) {
                Vector o = rmsnorm(x, {gv, p.epsilon});
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += up[i] * o[i];
                return acc;
            };
            RmsNormGrads g = rmsnorm_backward(x, p, up);
            worst = std::max(worst, max_rel_err(g.x, finite_diff_grad(loss_x, x)));
            worst = std::max(worst, max_rel_err(g.gamma, finite_diff_grad(loss_g, p.gamma)));
        }
        record("rmsnorm gradient check", worst <= grad_tol,
               "max rel err " + std::to_string(worst));
    }
    {
        std::mt19937_64 rng(seed + 5);
        double worst = 0.0;
        for (int it = 0; it < 20; ++it) {
            const std::size_t d = 4, h = 5;
            Vector x = random_vector(rng, d);
            SwigluParams p{random_matrix(rng, d, h), random_vector(rng, h),
                           random_matrix(rng, d, h), random_vector(rng, h), 1.0};
            Vector up = random_vector(rng, h);
            auto weighted = [&](const Vector& o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < h; ++i) acc += up[i] * o[i];
                return acc;
            };
            SwigluGrads g = swiglu_backward(x, p, up);
            worst = std::max(worst, max_rel_err(g.x, finite_diff_grad([&](const Vector& v) {
                return weighted(swiglu_ffn(v, p));
            }, x)));
            worst = std::max(worst, max_rel_err(g.b1, finite_diff_grad([&](const Vector& v) {
                SwigluParams q = p;
                q.b1 = v;
                return weighted(swiglu_ffn(x, q));
            }, p.b1)));
            worst = std::max(worst, max_rel_err(g.w1.data(), finite_diff_grad([&](const Vector& v) {
                SwigluParams q = p;
                q.w1 = Matrix(d, h, v);
                return weighted(swiglu_ffn(x, q));
            }, p.w1.data())));
            worst = std::max(worst, max_rel_err(g.w2.data(), finite_diff_grad([&](const Vector& v) {
                SwigluParams q = p;
                q.w2 = Matrix(d, h, v);
                return weighted(swiglu_ffn(x, q));
            }, p.w2.data())));
        }
        record("swiglu gradient check", worst <= grad_tol,
               "max rel err " + std::to_string(worst));
    }
    {
        std::mt19937_64 rng(seed + 6);
        double worst = 0.0;
        for (int it = 0; it < 20; ++it) {
            const std::size_t n = 8, d = 2, h = 5, m = 3;
            Matrix patches = random_matrix(rng, n, d);
            FusionMlpParams p{random_matrix(rng, 4 * d, h), random_vector(rng, h),
                              random_matrix(rng, h, m), random_vector(rng, m),
                              Activation::GELU};
            Matrix up = random_matrix(rng, n / 4, m);
            auto weighted = [&](const Matrix& o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < o.size(); ++i) acc += up.data()[i] * o.data()[i];
                return acc;
            };
            FusionMlpGrads g = fusion_mlp_backward(patches, p, up);
            worst = std::max(worst,
                             max_rel_err(g.patches.data(), finite_diff_grad([&](const Vector& v) {
                return weighted(fusion_mlp(Matrix(n, d, v), p));
            }, patches.data())));
            worst = std::max(worst, max_rel_err(g.w1.data(), finite_diff_grad([&](const Vector& v) {
                FusionMlpParams q = p;
                q.w1 = Matrix(4 * d, h, v);
                return weighted(fusion_mlp(patches, q));
            }, p.w1.data())));
            worst = std::max(worst, max_rel_err(g.w2.data(), finite_diff_grad([&](const Vector& v) {
                FusionMlpParams q = p;
                q.w2 = Matrix(h, m, v);
                return weighted(fusion_mlp(patches, q));
            }, p.w2.data())));
            worst = std::max(worst, max_rel_err(g.b1, finite_diff_grad([&](const Vector& v) {
                FusionMlpParams q = p;
                q.b1 = v;
                return weighted(fusion_mlp(patches, q));
            }, p.b1)));
            worst = std::max(worst, max_rel_err(g.b2, finite_diff_grad([&](const Vector& v) {
                FusionMlpParams q = p;
                q.b2 = v;
                return weighted(fusion_mlp(patches, q));
            }, p.b2)));
        }
        record("fusion_mlp gradient check", worst <= grad_tol,
               "max rel err " + std::to_string(worst));
    }

    // Fusion MLP vs an independent naive-loop evaluation.
    {
        std::mt19937_64 rng(seed + 7);
        const std::size_t n = 8, d = 2, h = 6, m = 3;
        Matrix patches = random_matrix(rng, n, d);
        FusionMlpParams p{random_matrix(rng, 4 * d, h), random_vector(rng, h),
                          random_matrix(rng, h, m), random_vector(rng, m), Activation::GELU};
        Matrix out = fusion_mlp(patches, p);
        bool ok = out.rows() == n / 4 && out.cols() == m;
        for (std::size_t r = 0; r < n / 4 && ok; ++r) {
            Vector row(4 * d);
            for (std::size_t g = 0; g < 4; ++g)
                for (std::size_t c = 0; c < d; ++c) row[g * d + c] = patches.at(4 * r + g, c);
            Vector hid(h);
            for (std::size_t j = 0; j < h; ++j) {
                double acc = p.b1[j];
                for (std::size_t i = 0; i < 4 * d; ++i) acc += row[i] * p.w1.at(i, j);
                hid[j] = gelu(acc);
            }
            for (std::size_t j = 0; j < m; ++j) {
                double acc = p.b2[j];
                for (std::size_t i = 0; i < h; ++i) acc += hid[i] * p.w2.at(i, j);
                if (std::fabs(acc - out.at(r, j)) > 1e-12) ok = false;
            }
        }
        record("fusion_mlp naive-loop oracle", ok);
    }

    // SGD geometric decay on f(theta) = |theta|^2.
    {
        Vector theta{1.0, 1.0};
        for (int it = 0; it < 100; ++it) {
            Vector grad{2.0 * theta[0], 2.0 * theta[1]};
            theta = sgd_step(theta, grad, 0.1);
        }
        const double norm = std::sqrt(theta[0] * theta[0] + theta[1] * theta[1]);
        record("sgd_step convergence on quadratic", norm < 1e-8);
    }

    return results;
}

inline bool print_selftest_table(const std::vector<SelftestResult>& results) {
    bool all_ok = true;
    for (const auto& r : results) {
        std::printf("[%s] %-42s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        all_ok = all_ok && r.passed;
    }
    return all_ok;
}

}  // namespace trafficrag
