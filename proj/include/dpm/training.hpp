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
 * @file training.hpp
 * @brief Two-stage training.
 *
 * Stage 1 trains the backbone, the live/spoof classifier, the semantic
 * classifiers and (when enabled) the label-quality head with Adam.
 * Stage 2 freezes backbone and label-quality head, then fits the normalized
 * live/spoof classifier and the data-quality head with plain SGD on the
 * Gaussian NLL.
 *
 * Every random draw comes from a stream derived from (seed, stage, epoch), so
 * a run resumed from a checkpoint taken at an epoch boundary reproduces the
 * uninterrupted run exactly.
 */

#pragma once

#include "dpm/common.hpp"
#include "dpm/data.hpp"
#include "dpm/inference.hpp"
#include "dpm/losses.hpp"
#include "dpm/model.hpp"
#include "dpm/random.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dpm {

struct StageConfig {
    std::string optimizer;
    double lr = 1e-4;
    int epochs = 50;
    int batch_size = 64;

    bool operator==(const StageConfig&) const = default;
};

struct TrainConfig {
    StageConfig stage1{"adam", 1e-4, 50, 64};
    StageConfig stage2{"sgd", 1e-1, 50, 64};
    double lambda_s = 1.0;
    uint64_t seed = 0;
    bool enable_semantic = true;
    bool enable_lq = true;
    bool enable_dq = true;
    std::vector<int> hidden{64, 64};
    int embed_dim = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double divergence_limit = 1e6;

    void validate() const {
        auto stage = [](const StageConfig& s, const char* name, const char* opt) {
            require(s.optimizer == opt, std::string(name) + ".optimizer must be '" + opt + "'");
            require(s.lr > 0.0, std::string(name) + ".lr must be > 0");
            require(s.epochs >= 0, std::string(name) + ".epochs must be >= 0");
            require(s.batch_size >= 1, std::string(name) + ".batch_size must be >= 1");
        };
        stage(stage1, "stage1", "adam");
        stage(stage2, "stage2", "sgd");
        require(embed_dim >= 1, "embed_dim must be >= 1");
        for (int h : hidden) require(h >= 1, "hidden widths must be >= 1");
        require(lambda_s >= 0.0, "lambda_s must be >= 0");
    }

    ModelSpec model_spec(const Dataset& ds) const {
        return ModelSpec{ds.feature_dim, hidden, embed_dim, ds.categories};
    }

    bool operator==(const TrainConfig&) const = default;
};

// Flat key = value config. '#' starts a comment; unknown keys are rejected.

inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::map<std::string, std::string> config_entries(const TrainConfig& c) {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {
        {"seed", std::to_string(c.seed)},
        {"lambda_s", format_short(c.lambda_s)},
        {"enable_semantic", b(c.enable_semantic)},
        {"enable_lq", b(c.enable_lq)},
        {"enable_dq", b(c.enable_dq)},
        {"hidden", join_ints(c.hidden)},
        {"embed_dim", std::to_string(c.embed_dim)},
        {"stage1.optimizer", c.stage1.optimizer},
        {"stage1.lr", format_short(c.stage1.lr)},
        {"stage1.epochs", std::to_string(c.stage1.epochs)},
        {"stage1.batch_size", std::to_string(c.stage1.batch_size)},
        {"stage2.optimizer", c.stage2.optimizer},
        {"stage2.lr", format_short(c.stage2.lr)},
        {"stage2.epochs", std::to_string(c.stage2.epochs)},
        {"stage2.batch_size", std::to_string(c.stage2.batch_size)},
        {"adam.beta1", format_short(c.adam_beta1)},
        {"adam.beta2", format_short(c.adam_beta2)},
        {"adam.eps", format_short(c.adam_eps)},
        {"divergence_limit", format_short(c.divergence_limit)},
    };
}

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& val) {
    auto bad = [&] { return ConfigError("bad value '" + val + "' for config key '" + key + "'"); };
    auto real = [&](double& out) { if (!parse_real(val, out)) throw bad(); };
    auto integer = [&](auto& out) { if (!parse_int(val, out)) throw bad(); };
    auto boolean = [&](bool& out) {
        if (val == "true" || val == "1") out = true;
        else if (val == "false" || val == "0") out = false;
        else throw bad();
    };
    if (key == "seed") integer(c.seed);
    else if (key == "lambda_s") real(c.lambda_s);
    else if (key == "enable_semantic") boolean(c.enable_semantic);
    else if (key == "enable_lq") boolean(c.enable_lq);
    else if (key == "enable_dq") boolean(c.enable_dq);
    else if (key == "hidden") {
        c.hidden.clear();
        if (!val.empty())
            for (auto part : split(val, ',')) {
                int w = 0;
                if (!parse_int(part, w)) throw bad();
                c.hidden.push_back(w);
            }
    } else if (key == "embed_dim") integer(c.embed_dim);
    else if (key == "stage1.optimizer") c.stage1.optimizer = val;
    else if (key == "stage1.lr") real(c.stage1.lr);
    else if (key == "stage1.epochs") integer(c.stage1.epochs);
    else if (key == "stage1.batch_size") integer(c.stage1.batch_size);
    else if (key == "stage2.optimizer") c.stage2.optimizer = val;
    else if (key == "stage2.lr") real(c.stage2.lr);
    else if (key == "stage2.epochs") integer(c.stage2.epochs);
    else if (key == "stage2.batch_size") integer(c.stage2.batch_size);
    else if (key == "adam.beta1") real(c.adam_beta1);
    else if (key == "adam.beta2") real(c.adam_beta2);
    else if (key == "adam.eps") real(c.adam_eps);
    else if (key == "divergence_limit") real(c.divergence_limit);
    else throw ConfigError("unknown config key '" + key + "'");
}

/// Keys not present in the stream keep their value from `base`.
inline TrainConfig parse_config(std::istream& is, const std::string& source = "config", TrainConfig base = {}) {
    TrainConfig c = std::move(base);
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
        try {
            set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    c.validate();
    return c;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    return parse_config(is, path, std::move(base));
}

inline std::string format_config(const TrainConfig& c) {
    std::string out;
    for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Training log
// ---------------------------------------------------------------------------

struct EpochRecord {
    int stage = 1;
    int epoch = 0;  // 1-based within the stage
    double loss_total = 0.0;
    double loss_live_spoof = 0.0;
    double loss_semantic = 0.0;
    double loss_dq = 0.0;
    double mean_sigma_l = 1.0;
    double mean_sigma_d_sq = 1.0;
    double train_accuracy = 0.0;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;

    void append(const TrainLog& other) { epochs.insert(epochs.end(), other.epochs.begin(), other.epochs.end()); }
    bool operator==(const TrainLog&) const = default;
};

inline void write_train_log(std::ostream& os, const TrainLog& log) {
    for (const auto& r : log.epochs) {
        nlohmann::ordered_json j;
        j["stage"] = r.stage;
        j["epoch"] = r.epoch;
        j["loss_total"] = r.loss_total;
        j["loss_live_spoof"] = r.loss_live_spoof;
        j["loss_semantic"] = r.loss_semantic;
        j["loss_dq"] = r.loss_dq;
        j["mean_sigma_l"] = r.mean_sigma_l;
        j["mean_sigma_d_sq"] = r.mean_sigma_d_sq;
        j["train_accuracy"] = r.train_accuracy;
        os << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

using TensorFilter = std::function<bool(const std::string&)>;

struct AdamState {
    ModelParams m;
    ModelParams v;
    int64_t step = 0;
};

inline AdamState make_adam_state(const ModelParams& p) { return AdamState{p.zeros_like(), p.zeros_like(), 0}; }

inline void adam_step(ModelParams& p, const ModelParams& grad, AdamState& st, const TrainConfig& cfg, double lr,
                      const TensorFilter& trainable) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
    std::vector<Matrix*> params, ms, vs;
    std::vector<const Matrix*> grads;
    std::vector<std::string> names;
    p.for_each([&](const std::string& n, Matrix& m) { names.push_back(n); params.push_back(&m); });
    grad.for_each([&](const std::string&, const Matrix& m) { grads.push_back(&m); });
    st.m.for_each([&](const std::string&, Matrix& m) { ms.push_back(&m); });
    st.v.for_each([&](const std::string&, Matrix& m) { vs.push_back(&m); });
    for (size_t t = 0; t < params.size(); ++t) {
        if (!trainable(names[t])) continue;
        const Matrix& g = *grads[t];
        *ms[t] = cfg.adam_beta1 * *ms[t] + (1.0 - cfg.adam_beta1) * g;
        *vs[t] = cfg.adam_beta2 * *vs[t] + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
        params[t]->array() -= lr * (ms[t]->array() / bc1) / ((vs[t]->array() / bc2).sqrt() + cfg.adam_eps);
    }
}

inline void sgd_step(ModelParams& p, const ModelParams& grad, double lr, const TensorFilter& trainable) {
    std::vector<const Matrix*> grads;
    grad.for_each([&](const std::string&, const Matrix& m) { grads.push_back(&m); });
    size_t t = 0;
    p.for_each([&](const std::string& n, Matrix& m) {
        if (trainable(n)) m -= lr * *grads[t];
        ++t;
    });
}

inline TensorFilter stage1_trainable(const TrainConfig& cfg) {
    const bool semantic = cfg.enable_semantic && cfg.lambda_s != 0.0;
    const bool lq = semantic && cfg.enable_lq;
    return [semantic, lq](const std::string& n) {
        if (is_backbone(n) || n == "omega_c") return true;
        if (n.rfind("omega_s.", 0) == 0) return semantic;
        if (is_lq_head(n)) return lq;
        return false;
    };
}

inline bool stage2_trainable(const std::string& n) { return n == "omega_c" || is_dq_head(n); }

// ---------------------------------------------------------------------------
// Loops
// ---------------------------------------------------------------------------

struct TrainResult {
    ModelParams params;
    TrainLog log;
};

/// Where a stage-1 run stands at an epoch boundary; enough to resume exactly.
struct Stage1State {
    ModelParams params;
    AdamState adam;
    int epochs_done = 0;
};

namespace detail {
inline std::vector<size_t> epoch_order(size_t n, uint64_t seed, uint64_t stream_id, int epoch) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(derive_seed(seed, stream_id), static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    return order;
}

inline void check_divergence(double loss, const TrainConfig& cfg, int stage, int epoch, const std::string& parts) {
    if (!std::isfinite(loss) || loss > cfg.divergence_limit)
        throw DivergenceError("training diverged in stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) +
                              ": loss " + format_real(loss) + " (" + parts + ")");
}

inline double accuracy(const std::vector<Prediction>& preds, const Dataset& ds) {
    if (preds.empty()) return 0.0;
    size_t ok = 0;
    for (size_t i = 0; i < preds.size(); ++i) ok += preds[i].predicted_class == ds.samples[i].c;
    return static_cast<double>(ok) / static_cast<double>(preds.size());
}
}  // namespace detail

inline Stage1State stage1_initial_state(const Dataset& ds, const TrainConfig& cfg) {
    ModelParams p = init_params(cfg.model_spec(ds), cfg.seed);
    return Stage1State{p, make_adam_state(p), 0};
}

/// Runs stage-1 epochs [state.epochs_done, until_epoch).
inline TrainLog continue_stage1(Stage1State& state, const Dataset& ds, const TrainConfig& cfg, int until_epoch) {
    cfg.validate();
    if (ds.empty()) throw DataError("cannot train on an empty dataset");
    const bool semantic = cfg.enable_semantic && cfg.lambda_s != 0.0;
    if (semantic && ds.categories.empty()) throw ConfigError("semantic supervision requested but dataset has no categories");
    const Stage1Options opt{semantic, cfg.enable_lq};
    const TensorFilter trainable = stage1_trainable(cfg);
    const int b = state.params.embed_dim();
    TrainLog log;

    for (int epoch = state.epochs_done; epoch < until_epoch; ++epoch) {
        const auto order = detail::epoch_order(ds.size(), cfg.seed, stream::kShuffle1, epoch);
        Rng eps_rng(derive_seed(derive_seed(cfg.seed, stream::kEpsilon), static_cast<uint64_t>(epoch)));
        EpochRecord rec;
        rec.stage = 1;
        rec.epoch = epoch + 1;
        double sum_sigma = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.stage1.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.stage1.batch_size));
            const std::span<const size_t> idx(order.data() + start, stop - start);
            const Batch batch = Batch::from(ds, idx);
            const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
            const Matrix eps = opt.semantic && opt.probabilistic ? eps_rng.normal_matrix(n, b) : Matrix();
            ModelParams grad = state.params.zeros_like();
            const Stage1Loss loss = stage1_objective(state.params, batch, eps, cfg.lambda_s, opt, &grad);
            double sem = 0.0;
            for (const auto& s : loss.semantic) sem += s.total;
            detail::check_divergence(loss.total.total, cfg, 1, epoch + 1,
                                     "live_spoof " + format_real(loss.live_spoof.total) + ", semantic " + format_real(sem));
            const double w = static_cast<double>(n) / static_cast<double>(ds.size());
            rec.loss_total += w * loss.total.total;
            rec.loss_live_spoof += w * loss.live_spoof.total;
            rec.loss_semantic += w * sem;
            sum_sigma += w * loss.mean_sigma_l;
            adam_step(state.params, grad, state.adam, cfg, cfg.stage1.lr, trainable);
        }
        if (!state.params.all_finite())
            throw DivergenceError("training diverged in stage 1 epoch " + std::to_string(epoch + 1) + ": non-finite parameters");
        const Matrix x = ds.features();
        const BatchPrediction pred = predict_batch(state.params, x, false);
        rec.mean_sigma_l = opt.semantic && opt.probabilistic ? pred.embeddings.sigma_l.mean() : sum_sigma;
        rec.mean_sigma_d_sq = pred.embeddings.sigma_d_sq.mean();
        rec.train_accuracy = detail::accuracy(pred.predictions, ds);
        log.epochs.push_back(rec);
        state.epochs_done = epoch + 1;
    }
    return log;
}

/// Stage 1: backbone, live/spoof and semantic classifiers, label-quality head.
/// With enable_lq = false the semantic terms use mu directly and the
/// label-quality head is left untouched.
inline TrainResult train_stage1_lq(const Dataset& ds, const TrainConfig& cfg) {
    Stage1State st = stage1_initial_state(ds, cfg);
    TrainLog log = continue_stage1(st, ds, cfg, cfg.stage1.epochs);
    return {std::move(st.params), std::move(log)};
}

/// Stage 2: backbone and label-quality head frozen; SGD on omega_C and the
/// data-quality head against the normalized Gaussian NLL.
inline TrainResult train_stage2_dq(const ModelParams& initial, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.empty()) throw DataError("cannot train on an empty dataset");
    ModelParams p = initial;
    TrainLog log;
    const Matrix mu_all = embed(p, ds.features());  // frozen backbone
    const std::vector<int> labels = ds.live_labels();

    for (int epoch = 0; epoch < cfg.stage2.epochs; ++epoch) {
        const auto order = detail::epoch_order(ds.size(), cfg.seed, stream::kShuffle2, epoch);
        EpochRecord rec;
        rec.stage = 2;
        rec.epoch = epoch + 1;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.stage2.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.stage2.batch_size));
            std::vector<int> rows, lab;
            for (size_t r = start; r < stop; ++r) {
                rows.push_back(static_cast<int>(order[r]));
                lab.push_back(labels[order[r]]);
            }
            const Matrix mu = detail::gather_rows(mu_all, rows);
            ModelParams grad = p.zeros_like();
            const Stage2Loss loss = stage2_objective_from_embedding(p, mu, lab, &grad);
            detail::check_divergence(loss.nll.total, cfg, 2, epoch + 1, "dq_nll " + format_real(loss.nll.total));
            const double w = static_cast<double>(rows.size()) / static_cast<double>(ds.size());
            rec.loss_total += w * loss.nll.total;
            rec.loss_dq += w * loss.nll.total;
            sgd_step(p, grad, cfg.stage2.lr, stage2_trainable);
        }
        if (!p.all_finite())
            throw DivergenceError("training diverged in stage 2 epoch " + std::to_string(epoch + 1) + ": non-finite parameters");
        const Matrix mu_n = l2_normalize_rows(mu_all);
        const Vector s2 = dq_variance(p, mu_n);
        rec.mean_sigma_d_sq = s2.mean();
        rec.mean_sigma_l = lq_variance(p, mu_all).mean();
        const Matrix om_n = l2_normalize_rows(p.omega_c);
        size_t ok = 0;
        for (Eigen::Index i = 0; i < mu_n.rows(); ++i)
            ok += corrected_confidence(mu_n.row(i), om_n, s2(i)).predicted_class == labels[static_cast<size_t>(i)];
        rec.train_accuracy = static_cast<double>(ok) / static_cast<double>(ds.size());
        log.epochs.push_back(rec);
    }
    return {std::move(p), std::move(log)};
}

/// Stage 1 then (if enable_dq) stage 2.
inline TrainResult train_full_dpm(const Dataset& ds, const TrainConfig& cfg) {
    TrainResult r = train_stage1_lq(ds, cfg);
    if (cfg.enable_dq) {
        TrainResult r2 = train_stage2_dq(r.params, ds, cfg);
        r.log.append(r2.log);
        r.params = std::move(r2.params);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   dpm-checkpoint v1
//   config <key>=<value>            (one line per config key)
//   category <name> <cardinality>
//   [progress stage1 <epochs_done> <adam step>]
//   tensor <name> <rows> <cols>
//   <row values ...>                (one line per row)
//
// Optimizer moments are stored as tensors named adam.m.<name> / adam.v.<name>.
// ---------------------------------------------------------------------------

class CheckpointError : public DataError {
public:
    CheckpointError(std::string field, const std::string& msg) : DataError("checkpoint: " + msg), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

struct Checkpoint {
    ModelParams params;
    TrainConfig config;
    std::vector<Category> categories;
    std::optional<Stage1State> stage1_state;  // params duplicated in stage1_state->params when present
};

namespace detail {
inline void write_tensor(std::ostream& os, const std::string& name, const Matrix& m) {
    os << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << format_real(m(i, j));
        os << '\n';
    }
}
}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ModelParams& p, const TrainConfig& cfg,
                             const std::vector<Category>& categories, const Stage1State* state = nullptr) {
    os << "dpm-checkpoint v1\n";
    for (const auto& [k, v] : config_entries(cfg)) os << "config " << k << '=' << v << '\n';
    for (const auto& c : categories) os << "category " << c.name << ' ' << c.cardinality << '\n';
    if (state) os << "progress stage1 " << state->epochs_done << ' ' << state->adam.step << '\n';
    p.for_each([&](const std::string& n, const Matrix& m) { detail::write_tensor(os, n, m); });
    if (state) {
        state->adam.m.for_each([&](const std::string& n, const Matrix& m) { detail::write_tensor(os, "adam.m." + n, m); });
        state->adam.v.for_each([&](const std::string& n, const Matrix& m) { detail::write_tensor(os, "adam.v." + n, m); });
    }
}

/// Reads a checkpoint; tensor shapes are validated against the model implied
/// by the stored config and categories (and against `expected` if given).
inline Checkpoint read_checkpoint(std::istream& is, const std::optional<TrainConfig>& expected = std::nullopt,
                                  std::optional<int> expected_input_dim = std::nullopt) {
    std::string line;
    if (!std::getline(is, line) || line != "dpm-checkpoint v1") throw CheckpointError("header", "missing 'dpm-checkpoint v1' header");
    Checkpoint ck;
    std::map<std::string, Matrix> tensors;
    std::optional<std::pair<int, int64_t>> progress;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "config") {
            std::string kv;
            std::getline(ls >> std::ws, kv);
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw CheckpointError("config", "bad config line '" + line + "'");
            set_config_value(ck.config, kv.substr(0, eq), kv.substr(eq + 1));
        } else if (kind == "category") {
            Category c;
            if (!(ls >> c.name >> c.cardinality)) throw CheckpointError("category", "bad category line");
            ck.categories.push_back(c);
        } else if (kind == "progress") {
            std::string stage;
            int done = 0;
            int64_t step = 0;
            if (!(ls >> stage >> done >> step) || stage != "stage1") throw CheckpointError("progress", "bad progress line");
            progress = {done, step};
        } else if (kind == "tensor") {
            std::string name;
            Eigen::Index rows = 0, cols = 0;
            if (!(ls >> name >> rows >> cols) || rows < 0 || cols < 0) throw CheckpointError("tensor", "bad tensor line");
            Matrix m(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i) {
                if (!std::getline(is, line)) throw CheckpointError(name, "truncated tensor '" + name + "'");
                auto vals = split(line, ' ');
                if (static_cast<Eigen::Index>(vals.size()) != cols)
                    throw CheckpointError(name, "tensor '" + name + "' row " + std::to_string(i) + " has wrong width");
                for (Eigen::Index j = 0; j < cols; ++j)
                    if (!parse_real(vals[static_cast<size_t>(j)], m(i, j))) throw CheckpointError(name, "bad value in '" + name + "'");
            }
            tensors[name] = std::move(m);
        } else {
            throw CheckpointError("record", "unknown record '" + kind + "'");
        }
    }
    ck.config.validate();
    if (expected) {
        if (expected->embed_dim != ck.config.embed_dim)
            throw CheckpointError("embed_dim", "embedding dimension mismatch: checkpoint has B=" + std::to_string(ck.config.embed_dim) +
                                                   ", expected B=" + std::to_string(expected->embed_dim));
        if (expected->hidden != ck.config.hidden)
            throw CheckpointError("hidden", "hidden widths mismatch: checkpoint has " + join_ints(ck.config.hidden) + ", expected " +
                                                join_ints(expected->hidden));
    }

    auto first = tensors.find("backbone.0.weight");
    if (first == tensors.end()) throw CheckpointError("backbone.0.weight", "missing tensor 'backbone.0.weight'");
    const int input_dim = static_cast<int>(first->second.cols());
    if (expected_input_dim && *expected_input_dim != input_dim)
        throw CheckpointError("input_dim", "input dimension mismatch: checkpoint has D=" + std::to_string(input_dim) +
                                               ", data has D=" + std::to_string(*expected_input_dim));

    // Shapes implied by the config.
    const ModelSpec spec{input_dim, ck.config.hidden, ck.config.embed_dim, ck.categories};
    ModelParams shape = init_params(spec, 0);
    auto fill = [&](ModelParams& dst, const std::string& prefix) {
        dst.for_each([&](const std::string& n, Matrix& m) {
            auto it = tensors.find(prefix + n);
            if (it == tensors.end()) throw CheckpointError(prefix + n, "missing tensor '" + prefix + n + "'");
            if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
                throw CheckpointError(prefix + n, "tensor '" + prefix + n + "' has shape " + std::to_string(it->second.rows()) + "x" +
                                                      std::to_string(it->second.cols()) + ", expected " + std::to_string(m.rows()) + "x" +
                                                      std::to_string(m.cols()));
            m = it->second;
            tensors.erase(it);
        });
    };
    ck.params = shape;
    fill(ck.params, "");
    if (progress) {
        Stage1State st{ck.params, make_adam_state(shape), progress->first};
        st.adam.step = progress->second;
        fill(st.adam.m, "adam.m.");
        fill(st.adam.v, "adam.v.");
        ck.stage1_state = std::move(st);
    }
    if (!tensors.empty()) throw CheckpointError(tensors.begin()->first, "unexpected tensor '" + tensors.begin()->first + "'");
    return ck;
}

inline void save_checkpoint(const std::string& path, const ModelParams& p, const TrainConfig& cfg,
                            const std::vector<Category>& categories, const Stage1State* state = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write_checkpoint(os, p, cfg, categories, state);
    if (!os) throw DataError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path, const std::optional<TrainConfig>& expected = std::nullopt,
                                  std::optional<int> expected_input_dim = std::nullopt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    return read_checkpoint(is, expected, expected_input_dim);
}

}  // namespace dpm
