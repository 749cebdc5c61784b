// Copyright 2026 The DPM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/**
 * @file model.hpp
 * @brief A small differentiable model: MLP backbone producing the embedding
 * mu, a label-quality head producing a per-dimension standard deviation, a
 * data-quality head producing a per-sample variance, and bias-free linear
 * classifiers for live/spoof and for each semantic category.
 *
 * Every forward function has a matching backward function that accumulates
 * parameter gradients into a ModelParams of identical shape.
 */

#pragma once

#include "dpm/common.hpp"
#include "dpm/data.hpp"
#include "dpm/random.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dpm {

struct ModelSpec {
    int input_dim = 0;
    std::vector<int> hidden{64, 64};
    int embed_dim = 32;
    std::vector<Category> categories;

    bool operator==(const ModelSpec&) const = default;
};

struct ModelParams {
    // Backbone: layer l maps act[l] -> act[l+1]; tanh on every layer but the last.
    std::vector<Matrix> weights;  // [out x in]
    std::vector<Matrix> biases;   // [1 x out]
    // Label-quality head: sigma_L = exp(0.5 * (mu A^T + b)).
    Matrix lq_weight;  // [B x B]
    Matrix lq_bias;    // [1 x B]
    // Data-quality head: sigma_D^2 = exp(mu a^T + c).
    Matrix dq_weight;  // [1 x B]
    Matrix dq_bias;    // [1 x 1]
    Matrix omega_c;    // [2 x B], row c selected by the live/spoof label
    std::vector<Matrix> omega_s;      // [A_k x B] per category
    std::vector<std::string> category_names;

    int embed_dim() const { return static_cast<int>(omega_c.cols()); }
    int input_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }

    /// Visits every tensor with its stable name.
    template <typename Self, typename F>
    static void visit(Self& self, F&& fn) {
        for (size_t l = 0; l < self.weights.size(); ++l) {
            fn("backbone." + std::to_string(l) + ".weight", self.weights[l]);
            fn("backbone." + std::to_string(l) + ".bias", self.biases[l]);
        }
        fn(std::string("lq.weight"), self.lq_weight);
        fn(std::string("lq.bias"), self.lq_bias);
        fn(std::string("dq.weight"), self.dq_weight);
        fn(std::string("dq.bias"), self.dq_bias);
        fn(std::string("omega_c"), self.omega_c);
        for (size_t k = 0; k < self.omega_s.size(); ++k) fn("omega_s." + self.category_names[k], self.omega_s[k]);
    }
    template <typename F>
    void for_each(F&& fn) { visit(*this, std::forward<F>(fn)); }
    template <typename F>
    void for_each(F&& fn) const { visit(*this, std::forward<F>(fn)); }

    ModelParams zeros_like() const {
        ModelParams z = *this;
        z.for_each([](const std::string&, Matrix& m) { m.setZero(); });
        return z;
    }

    bool all_finite() const {
        bool ok = true;
        for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
        return ok;
    }

    size_t category_slot(const std::string& name) const {
        for (size_t k = 0; k < category_names.size(); ++k)
            if (category_names[k] == name) return k;
        throw ConfigError("model has no classifier for category '" + name + "'");
    }

    bool operator==(const ModelParams& o) const {
        if (category_names != o.category_names || weights.size() != o.weights.size() ||
            omega_s.size() != o.omega_s.size())
            return false;
        bool eq = true;
        std::vector<const Matrix*> mine, theirs;
        for_each([&](const std::string&, const Matrix& m) { mine.push_back(&m); });
        o.for_each([&](const std::string&, const Matrix& m) { theirs.push_back(&m); });
        for (size_t i = 0; i < mine.size() && eq; ++i)
            eq = mine[i]->rows() == theirs[i]->rows() && mine[i]->cols() == theirs[i]->cols() && *mine[i] == *theirs[i];
        return eq;
    }
};

/// 64-bit FNV-1a over the raw bytes of the named tensors; used for freeze checks.
inline uint64_t tensor_hash(const ModelParams& p, const std::function<bool(const std::string&)>& select) {
    uint64_t h = 1469598103934665603ull;
    p.for_each([&](const std::string& name, const Matrix& m) {
        if (!select(name)) return;
        const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
        for (size_t i = 0; i < static_cast<size_t>(m.size()) * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    });
    return h;
}

inline bool is_backbone(const std::string& name) { return name.rfind("backbone.", 0) == 0; }
inline bool is_lq_head(const std::string& name) { return name.rfind("lq.", 0) == 0; }
inline bool is_dq_head(const std::string& name) { return name.rfind("dq.", 0) == 0; }

/// Gaussian weights with std 1/sqrt(fan_in), zero biases, zero variance heads
/// so that sigma_L = 1 and sigma_D^2 = 1 at start.
inline ModelParams init_params(const ModelSpec& spec, uint64_t seed) {
    require(spec.input_dim >= 1, "input_dim must be >= 1");
    require(spec.embed_dim >= 1, "embed_dim must be >= 1");
    for (int h : spec.hidden) require(h >= 1, "hidden widths must be >= 1");
    Rng rng(derive_seed(seed, stream::kInit));
    ModelParams p;
    int fan_in = spec.input_dim;
    std::vector<int> widths = spec.hidden;
    widths.push_back(spec.embed_dim);
    for (int w : widths) {
        p.weights.push_back(rng.normal_matrix(w, fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in))));
        p.biases.push_back(Matrix::Zero(1, w));
        fan_in = w;
    }
    const int b = spec.embed_dim;
    p.lq_weight = Matrix::Zero(b, b);
    p.lq_bias = Matrix::Zero(1, b);
    p.dq_weight = Matrix::Zero(1, b);
    p.dq_bias = Matrix::Zero(1, 1);
    const double w_std = 1.0 / std::sqrt(static_cast<double>(b));
    p.omega_c = rng.normal_matrix(2, b, w_std);
    for (const auto& cat : spec.categories) {
        require(cat.cardinality >= 2, "category '" + cat.name + "' needs cardinality >= 2");
        p.omega_s.push_back(rng.normal_matrix(cat.cardinality, b, w_std));
        p.category_names.push_back(cat.name);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

struct BackboneTrace {
    std::vector<Matrix> act;  // act[0] = X, act.back() = mu
};

inline Matrix embed(const ModelParams& p, const Matrix& x, BackboneTrace* trace = nullptr) {
    require_shape(x.cols() == p.input_dim(),
                  "input has " + std::to_string(x.cols()) + " columns, backbone expects " + std::to_string(p.input_dim()));
    Matrix a = x;
    if (trace) {
        trace->act.clear();
        trace->act.push_back(a);
    }
    const size_t n_layers = p.weights.size();
    for (size_t l = 0; l < n_layers; ++l) {
        Matrix pre = a * p.weights[l].transpose();
        pre.rowwise() += p.biases[l].row(0);
        a = (l + 1 < n_layers) ? Matrix(pre.array().tanh()) : pre;
        if (trace) trace->act.push_back(a);
    }
    return a;
}

/// Accumulates backbone gradients for dL/dmu into grad.
inline void embed_backward(const ModelParams& p, const BackboneTrace& trace, const Matrix& d_mu, ModelParams& grad) {
    Matrix delta = d_mu;
    for (size_t l = p.weights.size(); l-- > 0;) {
        // act[l+1] = f(act[l] W^T + b); for hidden layers f = tanh and f' = 1 - act^2
        if (l + 1 < p.weights.size()) delta.array() *= (1.0 - trace.act[l + 1].array().square());
        grad.weights[l].noalias() += delta.transpose() * trace.act[l];
        grad.biases[l] += delta.colwise().sum();
        if (l > 0) delta = delta * p.weights[l];
    }
}

// ---------------------------------------------------------------------------
// Variance heads
// ---------------------------------------------------------------------------

inline Matrix lq_variance(const ModelParams& p, const Matrix& mu) {
    require_shape(mu.cols() == p.embed_dim(), "lq head expects embedding dimension " + std::to_string(p.embed_dim()));
    Matrix pre = mu * p.lq_weight.transpose();
    pre.rowwise() += p.lq_bias.row(0);
    return (0.5 * pre.array()).exp().matrix();
}

/// Given sigma = lq_variance(mu) and dL/dsigma, accumulates head gradients
/// and returns dL/dmu through the head.
inline Matrix lq_variance_backward(const ModelParams& p, const Matrix& mu, const Matrix& sigma, const Matrix& d_sigma,
                                   ModelParams& grad) {
    Matrix d_pre = (0.5 * d_sigma.array() * sigma.array()).matrix();
    grad.lq_weight.noalias() += d_pre.transpose() * mu;
    grad.lq_bias += d_pre.colwise().sum();
    return d_pre * p.lq_weight;
}

/// Callers pass the l2-normalized embedding; the quality head reads direction only.
inline Vector dq_variance(const ModelParams& p, const Matrix& mu) {
    require_shape(mu.cols() == p.embed_dim(), "dq head expects embedding dimension " + std::to_string(p.embed_dim()));
    Vector pre = mu * p.dq_weight.row(0).transpose();
    pre.array() += p.dq_bias(0, 0);
    return pre.array().exp().matrix();
}

inline Matrix dq_variance_backward(const ModelParams& p, const Matrix& mu, const Vector& sigma_sq, const Vector& d_sigma_sq,
                                   ModelParams& grad) {
    Vector d_pre = d_sigma_sq.cwiseProduct(sigma_sq);
    grad.dq_weight.row(0) += (d_pre.transpose() * mu);
    grad.dq_bias(0, 0) += d_pre.sum();
    return d_pre * p.dq_weight.row(0);
}

// ---------------------------------------------------------------------------
// Classifiers (pure inner products, no bias)
// ---------------------------------------------------------------------------

inline Matrix semantic_logits(const ModelParams& p, const std::string& category, const Matrix& z) {
    const Matrix& w = p.omega_s[p.category_slot(category)];
    require_shape(z.cols() == w.cols(), "semantic classifier expects dimension " + std::to_string(w.cols()));
    return z * w.transpose();
}

inline Matrix live_spoof_logits(const ModelParams& p, const Matrix& mu) {
    require_shape(mu.cols() == p.omega_c.cols(), "live/spoof classifier expects dimension " + std::to_string(p.omega_c.cols()));
    return mu * p.omega_c.transpose();
}

}  // namespace dpm
