#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "gvalign/matrix.hpp"
#include "gvalign/nn.hpp"

namespace oracle {

using gvalign::Matrix;

/// Scalar soft-label cross entropy written directly from its definition.
inline double soft_ce(const Matrix& z, const Matrix& y) {
    double total = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < z.cols(); ++c) s += std::exp(z(r, c));
        for (std::size_t c = 0; c < z.cols(); ++c) total -= y(r, c) * std::log(std::exp(z(r, c)) / s);
    }
    return total / static_cast<double>(z.rows());
}

/// Network evaluation from first principles: per-sample loops, no kernels.
inline Matrix naive_logits(const gvalign::Model& m, const Matrix& x) {
    const auto& layers = m.extractor.layers();
    Matrix out(x.rows(), m.bank.num_classes());
    for (std::size_t b = 0; b < x.rows(); ++b) {
        std::vector<double> h(x.row(b).begin(), x.row(b).end());
        for (std::size_t l = 0; l < layers.size(); ++l) {
            std::vector<double> next(layers[l].weight.rows());
            for (std::size_t o = 0; o < next.size(); ++o) {
                double s = layers[l].bias[o];
                for (std::size_t i = 0; i < h.size(); ++i) s += layers[l].weight(o, i) * h[i];
                next[o] = m.extractor.rectified(l) ? std::max(0.0, s) : s;
            }
            h = std::move(next);
        }
        std::size_t col = 0;
        for (const auto& blk : m.bank.blocks()) {
            for (std::size_t r = 0; r < blk.weight.rows(); ++r, ++col) {
                double dot = 0.0, wn = 0.0, fn = 0.0;
                for (std::size_t i = 0; i < h.size(); ++i) {
                    dot += blk.weight(r, i) * h[i];
                    wn += blk.weight(r, i) * blk.weight(r, i);
                    fn += h[i] * h[i];
                }
                if (m.bank.mode() == gvalign::HeadMode::linear) out(b, col) = dot + blk.bias[r];
                else out(b, col) = (wn > 0 && fn > 0) ? dot / std::sqrt(wn * fn) : 0.0;
            }
        }
    }
    return out;
}

/// Visits every scalar parameter of the model together with its analytic gradient.
inline void for_each_param(gvalign::Model& m, const gvalign::GradientSet& g,
                           const std::function<void(double&, double)>& fn) {
    auto& layers = m.extractor.mutable_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t i = 0; i < layers[l].weight.size(); ++i) fn(layers[l].weight.values()[i], g.extractor[l].weight.values()[i]);
        for (std::size_t i = 0; i < layers[l].bias.size(); ++i) fn(layers[l].bias[i], g.extractor[l].bias[i]);
    }
    auto& blocks = m.bank.mutable_blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t i = 0; i < blocks[b].weight.size(); ++i) fn(blocks[b].weight.values()[i], g.heads[b].weight.values()[i]);
        if (m.bank.mode() == gvalign::HeadMode::linear)
            for (std::size_t i = 0; i < blocks[b].bias.size(); ++i) fn(blocks[b].bias[i], g.heads[b].bias[i]);
    }
}

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1e-6, std::abs(analytic), std::abs(numeric)});
}

/// Max relative error between analytic gradients and central differences of `loss`.
inline double max_fd_error(gvalign::Model model, const gvalign::GradientSet& grads,
                           const std::function<double(const gvalign::Model&)>& loss, double h = 1e-4) {
    double worst = 0.0;
    gvalign::Model probe = model;
    for_each_param(probe, grads, [&](double& p, double analytic) {
        const double saved = p;
        p = saved + h;
        const double up = loss(probe);
        p = saved - h;
        const double down = loss(probe);
        p = saved;
        worst = std::max(worst, relative_error(analytic, (up - down) / (2.0 * h)));
    });
    return worst;
}

/// Exhaustive greedy herding: at every step evaluates the running mean of
/// each remaining candidate from scratch and keeps the first minimiser.
inline std::vector<std::size_t> greedy_herding(const Matrix& x, std::size_t m) {
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) mu[c] += x(i, c) / static_cast<double>(n);
    std::vector<std::size_t> chosen;
    while (chosen.size() < std::min(m, n)) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::find(chosen.begin(), chosen.end(), j) != chosen.end()) continue;
            std::vector<double> mean(d, 0.0);
            for (std::size_t c = 0; c < d; ++c) {
                double s = x(j, c);
                for (std::size_t k : chosen) s += x(k, c);
                mean[c] = s / static_cast<double>(chosen.size() + 1);
            }
            double dist = 0.0;
            for (std::size_t c = 0; c < d; ++c) dist += (mu[c] - mean[c]) * (mu[c] - mean[c]);
            if (dist < best) {
                best = dist;
                arg = j;
            }
        }
        chosen.push_back(arg);
    }
    return chosen;
}

/// Unbiased covariance as an explicit sum of outer products.
inline Matrix brute_covariance(const Matrix& x) {
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) mean[c] += x(i, c);
    for (double& v : mean) v /= static_cast<double>(n);
    Matrix cov(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) cov(a, b) += (x(i, a) - mean[a]) * (x(i, b) - mean[b]);
    for (double& v : cov.values()) v /= static_cast<double>(n - 1);
    return cov;
}

/// Rosenblatt perceptron on (x, +-1) labels; returns training accuracy.
inline double perceptron_train_accuracy(const Matrix& x, const std::vector<int>& sign, int epochs = 1000) {
    std::vector<double> w(x.cols() + 1, 0.0);
    const auto score = [&](std::size_t i) {
        double s = w.back();
        for (std::size_t c = 0; c < x.cols(); ++c) s += w[c] * x(i, c);
        return s;
    };
    for (int e = 0; e < epochs; ++e) {
        int mistakes = 0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            if (sign[i] * score(i) <= 0) {
                ++mistakes;
                for (std::size_t c = 0; c < x.cols(); ++c) w[c] += sign[i] * x(i, c);
                w.back() += sign[i];
            }
        }
        if (mistakes == 0) break;
    }
    std::size_t ok = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) ok += sign[i] * score(i) > 0;
    return static_cast<double>(ok) / static_cast<double>(x.rows());
}

/// Full-batch multinomial logistic regression (bias included) by plain
/// gradient descent, written without the library's network code.
struct LogisticModel {
    std::vector<std::vector<double>> w;  // [K][d+1]
    int predict(const std::vector<double>& x) const {
        int best = 0;
        double bv = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < w.size(); ++k) {
            double s = w[k].back();
            for (std::size_t i = 0; i < x.size(); ++i) s += w[k][i] * x[i];
            if (s > bv) {
                bv = s;
                best = static_cast<int>(k);
            }
        }
        return best;
    }
};

inline LogisticModel fit_logistic(const Matrix& x, const std::vector<int>& y, int k, int iters = 2000, double lr = 0.5) {
    const std::size_t d = x.cols();
    LogisticModel m{std::vector<std::vector<double>>(static_cast<std::size_t>(k), std::vector<double>(d + 1, 0.0))};
    for (int it = 0; it < iters; ++it) {
        std::vector<std::vector<double>> g(static_cast<std::size_t>(k), std::vector<double>(d + 1, 0.0));
        for (std::size_t r = 0; r < x.rows(); ++r) {
            std::vector<double> s(static_cast<std::size_t>(k));
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                double v = m.w[c].back();
                for (std::size_t i = 0; i < d; ++i) v += m.w[c][i] * x(r, i);
                s[c] = v;
                mx = std::max(mx, v);
            }
            double z = 0.0;
            for (double& v : s) z += (v = std::exp(v - mx));
            for (int c = 0; c < k; ++c) {
                const double e = s[c] / z - (y[r] == c ? 1.0 : 0.0);
                for (std::size_t i = 0; i < d; ++i) g[c][i] += e * x(r, i);
                g[c].back() += e;
            }
        }
        for (int c = 0; c < k; ++c)
            for (std::size_t i = 0; i <= d; ++i) m.w[c][i] -= lr * g[c][i] / static_cast<double>(x.rows());
    }
    return m;
}

}  // namespace oracle
