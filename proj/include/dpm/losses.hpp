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
 * @file losses.hpp
 * @brief Training objectives with analytic gradients.
 *
 *  - softmax cross-entropy on inner-product logits (semantic and live/spoof)
 *  - the reparameterized semantic cross-entropy evaluated at z = mu + eps * sigma_L
 *  - the Gaussian negative log-likelihood around the class weight vector,
 *    0.5 * (ln s + |w_c - mu|^2 / s) + 0.5 ln 2 pi, with s = sigma_D^2
 *  - row-wise l2 normalization and the two stage objectives
 *
 * All gradients are of LossValue::total, i.e. of the batch mean.
 */

#pragma once

#include "dpm/common.hpp"
#include "dpm/data.hpp"
#include "dpm/model.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace dpm {

inline constexpr double kVarianceFloor = 1e-8;

struct LossValue {
    double total = 0.0;
    Vector per_sample;

    static LossValue from_per_sample(Vector v) {
        LossValue out;
        out.total = v.size() ? v.mean() : 0.0;
        out.per_sample = std::move(v);
        return out;
    }
};

struct CeGrad {
    Matrix d_input;  // dL/d(features)
    Matrix d_omega;  // dL/d(classifier)
};

namespace detail {
inline void check_labels(std::span<const int> labels, Eigen::Index n_rows, Eigen::Index n_classes) {
    require_shape(static_cast<Eigen::Index>(labels.size()) == n_rows, "label count differs from batch size");
    for (int s : labels)
        if (s < 0 || s >= n_classes)
            throw DataError("label " + std::to_string(s) + " out of range [0, " + std::to_string(n_classes) + ")");
}
}  // namespace detail

/// -log softmax(feats * omega^T)[label], max-subtracted.
inline LossValue softmax_cross_entropy(const Matrix& feats, const Matrix& omega, std::span<const int> labels,
                                       CeGrad* grad = nullptr) {
    require_shape(feats.cols() == omega.cols(), "feature dimension differs from classifier dimension");
    detail::check_labels(labels, feats.rows(), omega.rows());
    const Eigen::Index n = feats.rows();
    Matrix logits = feats * omega.transpose();
    Vector per(n);
    Matrix d_logits(n, omega.rows());
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index arg = 0;
        const double m = logits.row(i).maxCoeff(&arg);
        auto shifted = (logits.row(i).array() - m).eval();
        // Sum the non-max terms separately so log1p keeps precision when one logit dominates.
        double rest = 0.0;
        for (Eigen::Index j = 0; j < shifted.size(); ++j)
            if (j != arg) rest += std::exp(shifted(j));
        const double lse = std::log1p(rest);
        per(i) = lse - shifted(labels[i]);
        if (grad) {
            d_logits.row(i) = (shifted - lse).exp().matrix();
            d_logits(i, labels[i]) -= 1.0;
        }
    }
    if (grad && n > 0) {
        d_logits /= static_cast<double>(n);
        grad->d_input = d_logits * omega;
        grad->d_omega = d_logits.transpose() * feats;
    } else if (grad) {
        grad->d_input = Matrix::Zero(feats.rows(), feats.cols());
        grad->d_omega = Matrix::Zero(omega.rows(), omega.cols());
    }
    return LossValue::from_per_sample(std::move(per));
}

inline LossValue semantic_ce_deterministic(const Matrix& mu, const Matrix& omega_s, std::span<const int> labels,
                                           CeGrad* grad = nullptr) {
    return softmax_cross_entropy(mu, omega_s, labels, grad);
}

inline LossValue live_spoof_ce(const Matrix& mu, const Matrix& omega_c, std::span<const int> labels, CeGrad* grad = nullptr) {
    require_shape(omega_c.rows() == 2, "live/spoof classifier must have 2 rows");
    return softmax_cross_entropy(mu, omega_c, labels, grad);
}

/// z = mu + eps (.) sigma_L.
inline Matrix sample_z(const Matrix& mu, const Matrix& sigma_l, const Matrix& epsilon) {
    require_shape(mu.rows() == sigma_l.rows() && mu.cols() == sigma_l.cols(), "sigma_L must match mu");
    require_shape(mu.rows() == epsilon.rows() && mu.cols() == epsilon.cols(), "epsilon must match mu");
    return (mu.array() + epsilon.array() * sigma_l.array()).matrix();
}

struct ProbCeGrad {
    Matrix d_mu;
    Matrix d_sigma;
    Matrix d_omega;
};

inline LossValue semantic_ce_probabilistic(const Matrix& mu, const Matrix& sigma_l, const Matrix& omega_s,
                                           std::span<const int> labels, const Matrix& epsilon,
                                           ProbCeGrad* grad = nullptr) {
    const Matrix z = sample_z(mu, sigma_l, epsilon);
    CeGrad g;
    LossValue out = softmax_cross_entropy(z, omega_s, labels, grad ? &g : nullptr);
    if (grad) {
        grad->d_mu = g.d_input;
        grad->d_sigma = (g.d_input.array() * epsilon.array()).matrix();
        grad->d_omega = std::move(g.d_omega);
    }
    return out;
}

struct DqGrad {
    Matrix d_mu;
    Matrix d_omega;
    Vector d_sigma_sq;
};

inline LossValue dq_gaussian_nll(const Matrix& mu, const Matrix& omega_c, std::span<const int> labels,
                                 const Vector& sigma_sq, DqGrad* grad = nullptr) {
    require_shape(mu.cols() == omega_c.cols(), "embedding dimension differs from classifier dimension");
    require_shape(sigma_sq.size() == mu.rows(), "one variance per sample required");
    detail::check_labels(labels, mu.rows(), omega_c.rows());
    const Eigen::Index n = mu.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(sigma_sq(i) > 0.0)) throw DataError("sigma_D^2 must be positive (sample " + std::to_string(i) + ")");

    Vector per(n);
    if (grad) {
        grad->d_mu = Matrix::Zero(n, mu.cols());
        grad->d_omega = Matrix::Zero(omega_c.rows(), omega_c.cols());
        grad->d_sigma_sq = Vector::Zero(n);
    }
    const double inv_n = n ? 1.0 / static_cast<double>(n) : 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool floored = sigma_sq(i) < kVarianceFloor;
        const double s = floored ? kVarianceFloor : sigma_sq(i);
        const RowVector diff = omega_c.row(labels[i]) - mu.row(i);
        const double d2 = diff.squaredNorm();
        per(i) = 0.5 * (std::log(s) + d2 / s) + kHalfLog2Pi;
        if (grad) {
            // d/dmu = -(w - mu)/s, d/dw = (w - mu)/s, d/ds = 0.5 (1/s - d2/s^2)
            grad->d_mu.row(i) = -diff * (inv_n / s);
            grad->d_omega.row(labels[i]) += diff * (inv_n / s);
            grad->d_sigma_sq(i) = floored ? 0.0 : inv_n * 0.5 * (1.0 / s - d2 / (s * s));
        }
    }
    return LossValue::from_per_sample(std::move(per));
}

inline Matrix l2_normalize_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        if (!(norm > 0.0)) throw DataError("cannot l2-normalize zero-norm row " + std::to_string(i));
        out.row(i) = m.row(i) / norm;
    }
    return out;
}

/// Chain rule through row normalization: dL/dm = (g - (g.u) u) / |m|.
inline Matrix l2_normalize_rows_backward(const Matrix& m, const Matrix& d_out) {
    Matrix d_in(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        const RowVector u = m.row(i) / norm;
        d_in.row(i) = (d_out.row(i) - d_out.row(i).dot(u) * u) / norm;
    }
    return d_in;
}

// ---------------------------------------------------------------------------
// Stage objectives
// ---------------------------------------------------------------------------

/// Supervision targets for one semantic category. `rows` selects the batch
/// rows the category supervises (spoof rows for the spoof-type category).
struct CategoryTargets {
    std::string name;
    std::vector<int> rows;
    std::vector<int> labels;
};

struct Batch {
    Matrix x;
    std::vector<int> c;
    std::vector<CategoryTargets> semantic;

    static Batch from(const Dataset& ds, std::span<const size_t> indices) {
        Batch b;
        b.x.resize(static_cast<Eigen::Index>(indices.size()), ds.feature_dim);
        b.c.resize(indices.size());
        b.semantic.resize(ds.categories.size());
        for (size_t k = 0; k < ds.categories.size(); ++k) b.semantic[k].name = ds.categories[k].name;
        for (size_t r = 0; r < indices.size(); ++r) {
            const Sample& smp = ds.samples[indices[r]];
            for (int j = 0; j < ds.feature_dim; ++j) b.x(static_cast<Eigen::Index>(r), j) = smp.x[j];
            b.c[r] = smp.c;
            for (size_t k = 0; k < ds.categories.size(); ++k) {
                if (!ds.supervised(indices[r], k)) continue;
                b.semantic[k].rows.push_back(static_cast<int>(r));
                b.semantic[k].labels.push_back(smp.s[k]);
            }
        }
        return b;
    }

    static Batch from(const Dataset& ds) {
        std::vector<size_t> all(ds.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = i;
        return from(ds, all);
    }

    size_t size() const { return c.size(); }
};

namespace detail {
inline Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
    return out;
}
inline void scatter_add_rows(Matrix& dst, const Matrix& src, const std::vector<int>& rows) {
    for (size_t r = 0; r < rows.size(); ++r) dst.row(rows[r]) += src.row(static_cast<Eigen::Index>(r));
}
}  // namespace detail

struct Stage1Options {
    bool semantic = true;       // include the semantic terms at all
    bool probabilistic = true;  // sample z through the label-quality head
};

struct Stage1Loss {
    LossValue total;
    LossValue live_spoof;
    std::vector<LossValue> semantic;  // one per category (empty when disabled)
    double mean_sigma_l = 1.0;
};

/// live_spoof_ce + lambda_s * sum_k semantic CE. With opt.probabilistic the
/// semantic terms are evaluated at z = mu + eps * sigma_L (one eps per sample
/// shared by all categories); otherwise at mu. The semantic mean for a
/// category runs over the rows it supervises.
inline Stage1Loss stage1_objective(const ModelParams& p, const Batch& batch, const Matrix& epsilon, double lambda_s,
                                   const Stage1Options& opt = {}, ModelParams* grad = nullptr) {
    BackboneTrace trace;
    const Matrix mu = embed(p, batch.x, grad ? &trace : nullptr);
    const Eigen::Index n = mu.rows();

    Stage1Loss out;
    Matrix d_mu = Matrix::Zero(n, mu.cols());

    CeGrad cg;
    out.live_spoof = live_spoof_ce(mu, p.omega_c, batch.c, grad ? &cg : nullptr);
    if (grad) {
        d_mu += cg.d_input;
        grad->omega_c += cg.d_omega;
    }
    Vector total = out.live_spoof.per_sample;

    if (opt.semantic && lambda_s != 0.0) {
        Matrix sigma, z, d_sigma;
        if (opt.probabilistic) {
            sigma = lq_variance(p, mu);
            require_shape(epsilon.rows() == n && epsilon.cols() == mu.cols(), "epsilon must be N x B");
            z = sample_z(mu, sigma, epsilon);
            out.mean_sigma_l = sigma.mean();
            if (grad) d_sigma = Matrix::Zero(n, mu.cols());
        }
        const Matrix& feats = opt.probabilistic ? z : mu;
        for (const auto& tgt : batch.semantic) {
            const size_t slot = p.category_slot(tgt.name);
            const Matrix sub = detail::gather_rows(feats, tgt.rows);
            CeGrad sg;
            LossValue lv = softmax_cross_entropy(sub, p.omega_s[slot], tgt.labels, grad ? &sg : nullptr);
            // Per-sample contribution on the full batch, scaled so that the batch
            // mean of the total equals live_spoof + lambda * (mean over supervised rows).
            const double scale = tgt.rows.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(tgt.rows.size());
            for (size_t r = 0; r < tgt.rows.size(); ++r) total(tgt.rows[r]) += lambda_s * scale * lv.per_sample(static_cast<Eigen::Index>(r));
            if (grad && !tgt.rows.empty()) {
                Matrix d_feat = Matrix::Zero(n, mu.cols());
                detail::scatter_add_rows(d_feat, sg.d_input * lambda_s, tgt.rows);
                grad->omega_s[slot] += lambda_s * sg.d_omega;
                d_mu += d_feat;  // dz/dmu = I
                if (opt.probabilistic) d_sigma.array() += d_feat.array() * epsilon.array();
            }
            out.semantic.push_back(std::move(lv));
        }
        if (grad && opt.probabilistic) d_mu += lq_variance_backward(p, mu, sigma, d_sigma, *grad);
    }

    out.total = LossValue::from_per_sample(std::move(total));
    if (grad) embed_backward(p, trace, d_mu, *grad);
    return out;
}

struct Stage2Loss {
    LossValue nll;
    Vector sigma_sq;
    Matrix mu_normalized;
};

/// Gaussian NLL on l2-normalized mu and omega_C, with sigma_D^2 predicted from
/// the normalized embedding. Gradients flow to omega_c and the dq head only.
inline Stage2Loss stage2_objective_from_embedding(const ModelParams& p, const Matrix& mu, std::span<const int> labels,
                                                  ModelParams* grad = nullptr) {
    Stage2Loss out;
    out.mu_normalized = l2_normalize_rows(mu);
    const Matrix omega_n = l2_normalize_rows(p.omega_c);
    out.sigma_sq = dq_variance(p, out.mu_normalized);
    DqGrad g;
    out.nll = dq_gaussian_nll(out.mu_normalized, omega_n, labels, out.sigma_sq, grad ? &g : nullptr);
    if (grad) {
        grad->omega_c += l2_normalize_rows_backward(p.omega_c, g.d_omega);
        dq_variance_backward(p, out.mu_normalized, out.sigma_sq, g.d_sigma_sq, *grad);
    }
    return out;
}

inline Stage2Loss stage2_objective(const ModelParams& p, const Batch& batch, ModelParams* grad = nullptr) {
    return stage2_objective_from_embedding(p, embed(p, batch.x), batch.c, grad);
}

}  // namespace dpm
