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

#pragma once

#include "dpm/common.hpp"
#include "dpm/losses.hpp"
#include "dpm/model.hpp"

#include <array>
#include <fstream>
#include <string>
#include <vector>

namespace dpm {

/// probs[c] with c = 0 spoof, c = 1 live. quality is sigma_D^2.
struct Prediction {
    std::array<double, 2> probs{0.5, 0.5};
    int predicted_class = kLive;
    double quality = 1.0;
    bool corrected = false;

    double p_live() const { return probs[kLive]; }
    double confidence() const { return probs[predicted_class]; }
};

namespace detail {
inline Prediction two_class_softmax(double logit_spoof, double logit_live) {
    // Logistic form of the two-class softmax, exact for large gaps.
    const double gap = logit_live - logit_spoof;
    Prediction p;
    if (gap >= 0) {
        const double e = std::exp(-gap);
        p.probs[kLive] = 1.0 / (1.0 + e);
        p.probs[kSpoof] = e / (1.0 + e);
    } else {
        const double e = std::exp(gap);
        p.probs[kSpoof] = 1.0 / (1.0 + e);
        p.probs[kLive] = e / (1.0 + e);
    }
    // Ties resolve to live, matching the p_live >= threshold acceptance rule.
    p.predicted_class = p.probs[kLive] >= p.probs[kSpoof] ? kLive : kSpoof;
    return p;
}
}  // namespace detail

/// softmax(mu . omega_C^T).
inline Prediction standard_confidence(const RowVector& mu, const Matrix& omega_c) {
    require_shape(omega_c.rows() == 2 && omega_c.cols() == mu.size(), "omega_C must be 2 x B");
    return detail::two_class_softmax(omega_c.row(kSpoof).dot(mu), omega_c.row(kLive).dot(mu));
}

/// softmax over classes of -|omega_c - mu|^2 / (2 sigma^2). Inputs are the
/// l2-normalized embedding and classifier rows.
inline Prediction corrected_confidence(const RowVector& mu, const Matrix& omega_c, double sigma_sq) {
    require_shape(omega_c.rows() == 2 && omega_c.cols() == mu.size(), "omega_C must be 2 x B");
    if (!(sigma_sq > 0.0)) throw DataError("corrected confidence needs sigma_D^2 > 0");
    const double d_spoof = (omega_c.row(kSpoof) - mu).squaredNorm();
    const double d_live = (omega_c.row(kLive) - mu).squaredNorm();
    Prediction p = detail::two_class_softmax(-d_spoof / (2.0 * sigma_sq), -d_live / (2.0 * sigma_sq));
    p.quality = sigma_sq;
    p.corrected = true;
    return p;
}

struct EmbeddingBatch {
    Matrix mu;
    Matrix sigma_l;
    Vector sigma_d_sq;
};

struct BatchPrediction {
    std::vector<Prediction> predictions;
    EmbeddingBatch embeddings;
};

/// Uncorrected mode uses the raw embedding and classifier; corrected mode
/// normalizes both rows and damps by the predicted sigma_D^2.
inline BatchPrediction predict_batch(const ModelParams& p, const Matrix& x, bool corrected) {
    BatchPrediction out;
    out.embeddings.mu = embed(p, x);
    out.embeddings.sigma_l = lq_variance(p, out.embeddings.mu);
    const Matrix mu_n = l2_normalize_rows(out.embeddings.mu);
    out.embeddings.sigma_d_sq = dq_variance(p, mu_n);
    const Eigen::Index n = x.rows();
    out.predictions.reserve(static_cast<size_t>(n));
    if (corrected) {
        const Matrix omega_n = l2_normalize_rows(p.omega_c);
        for (Eigen::Index i = 0; i < n; ++i)
            out.predictions.push_back(corrected_confidence(mu_n.row(i), omega_n, out.embeddings.sigma_d_sq(i)));
    } else {
        for (Eigen::Index i = 0; i < n; ++i) {
            Prediction pr = standard_confidence(out.embeddings.mu.row(i), p.omega_c);
            pr.quality = out.embeddings.sigma_d_sq(i);
            out.predictions.push_back(pr);
        }
    }
    return out;
}

// Prediction dump: header line then `id,p_live,predicted,quality,corrected` records.

struct PredictionRecord {
    int64_t id = 0;
    double p_live = 0.5;
    int predicted = kLive;
    double quality = 1.0;
    bool corrected = false;

    bool operator==(const PredictionRecord&) const = default;
};

inline std::vector<PredictionRecord> to_records(const std::vector<Prediction>& preds) {
    std::vector<PredictionRecord> out;
    out.reserve(preds.size());
    for (size_t i = 0; i < preds.size(); ++i)
        out.push_back({static_cast<int64_t>(i), preds[i].p_live(), preds[i].predicted_class, preds[i].quality, preds[i].corrected});
    return out;
}

inline void write_predictions(std::ostream& os, const std::vector<PredictionRecord>& recs) {
    os << "id,p_live,predicted,quality,corrected\n";
    for (const auto& r : recs)
        os << r.id << ',' << format_real(r.p_live) << ',' << r.predicted << ',' << format_real(r.quality) << ','
           << (r.corrected ? 1 : 0) << '\n';
}

inline std::vector<PredictionRecord> read_predictions(std::istream& is, const std::string& source = "predictions") {
    std::string line;
    if (!std::getline(is, line)) throw DataError(source + ": empty prediction dump");
    if (line != "id,p_live,predicted,quality,corrected") throw ParseError(source + ":1", "bad prediction dump header");
    std::vector<PredictionRecord> out;
    size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split(line, ',');
        PredictionRecord r;
        int corr = 0;
        const std::string where = source + ":" + std::to_string(line_no);
        if (f.size() != 5 || !parse_int(f[0], r.id) || !parse_real(f[1], r.p_live) || !parse_int(f[2], r.predicted) ||
            !parse_real(f[3], r.quality) || !parse_int(f[4], corr))
            throw ParseError(where, "malformed prediction record");
        r.corrected = corr != 0;
        out.push_back(r);
    }
    return out;
}

inline void save_predictions(const std::vector<PredictionRecord>& recs, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write_predictions(os, recs);
}

inline std::vector<PredictionRecord> load_predictions(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    return read_predictions(is, path);
}

}  // namespace dpm
