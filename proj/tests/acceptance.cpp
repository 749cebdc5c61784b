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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

namespace {

using namespace dpm;
namespace fs = std::filesystem;

constexpr double kGradTol = 1e-4;
constexpr double kIdentityTol = 1e-12;
constexpr int kSeeds = 5;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
    double worst = 0.0;
    std::string worst_case;
    size_t cases = 0;
    for (const auto& c : oracle::gradient_suite()) {
        for (uint64_t seed = 1; seed <= 10; ++seed) {
            const double e = c.run(seed);
            if (!(e <= worst)) worst = e, worst_case = c.name + " seed " + std::to_string(seed);
        }
        ++cases;
    }
    return {worst < kGradTol, std::to_string(cases) + " losses/heads x 10 configs, max rel err " + fmt(worst) + " (" + worst_case + ")"};
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

Outcome reductions() {
    Rng rng(2026);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Matrix mu = random_matrix(rng, 6, 5), w = random_matrix(rng, 4, 5);
        const auto labels = oracle::random_labels(rng, 6, 4);
        const double det = semantic_ce_deterministic(mu, w, labels).total;
        const Matrix eps = random_matrix(rng, 6, 5), sigma = random_matrix(rng, 6, 5).array().abs().matrix();
        worst = std::max(worst, std::abs(semantic_ce_probabilistic(mu, Matrix::Zero(6, 5), w, labels, eps).total - det));
        worst = std::max(worst, std::abs(semantic_ce_probabilistic(mu, sigma, w, labels, Matrix::Zero(6, 5)).total - det));

        // Corrected confidence at sigma^2 = 1/2 against softmax(-|w_c - mu|^2).
        const RowVector m = random_matrix(rng, 1, 5).row(0);
        const Matrix wc = random_matrix(rng, 2, 5);
        const double ds = (wc.row(kSpoof) - m).squaredNorm(), dl = (wc.row(kLive) - m).squaredNorm();
        const double oracle_live = std::exp(-dl) / (std::exp(-dl) + std::exp(-ds));
        const Prediction p = corrected_confidence(m, wc, 0.5);
        worst = std::max(worst, std::abs(p.p_live() - oracle_live));
        worst = std::max(worst, std::abs(p.probs[kSpoof] - (1.0 - oracle_live)));

        // ACER is the mean of APCER and BPCER.
        std::vector<double> scores;
        std::vector<int> y;
        for (int i = 0; i < 40; ++i) scores.push_back(rng.uniform()), y.push_back(i < 2 ? i : static_cast<int>(rng.below(2)));
        const EvalReport r = evaluate(scores, y, rng.uniform());
        worst = std::max(worst, std::abs(r.acer - (apcer(scores, y, r.threshold_used) + bpcer(scores, y, r.threshold_used)) / 2.0));
    }
    return {worst <= kIdentityTol, "max deviation " + fmt(worst) + " over 20 random instances"};
}

Outcome dq_minimum() {
    constexpr double kStep = 1e-3;
    Rng rng(7);
    double worst_steps = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Matrix mu = random_matrix(rng, 1, 4), w = random_matrix(rng, 2, 4, 0.5);
        const std::vector<int> label{static_cast<int>(rng.below(2))};
        const double d2 = (w.row(label[0]) - mu.row(0)).squaredNorm();
        double best = std::numeric_limits<double>::infinity(), arg = 0.0;
        for (double s = kStep; s <= 2.0 * d2 + 1.0; s += kStep) {
            const double v = dq_gaussian_nll(mu, w, label, Vector::Constant(1, s)).total;
            if (v < best) best = v, arg = s;
        }
        worst_steps = std::max(worst_steps, std::abs(arg - d2) / kStep);
    }
    return {worst_steps <= 1.0, "grid step 1e-3, worst argmin offset " + fmt(worst_steps) + " steps over 20 distances"};
}

Outcome monte_carlo() {
    const double mu[2] = {0.3, -0.4}, sigma[2] = {0.8, 1.3}, w[2][2] = {{1.2, -0.5}, {-0.7, 0.9}};
    const Matrix mu_m{{mu[0], mu[1]}}, sigma_m{{sigma[0], sigma[1]}}, w_m{{w[0][0], w[0][1]}, {w[1][0], w[1][1]}};
    bool ok = true;
    std::string detail;
    for (int y : {0, 1}) {
        const std::vector<int> label{y};
        Rng rng(derive_seed(99, static_cast<uint64_t>(y)));
        constexpr int kDraws = 100000;
        double sum = 0.0, sum_sq = 0.0;
        Matrix eps(1, 2);
        for (int i = 0; i < kDraws; ++i) {
            eps(0, 0) = rng.normal();
            eps(0, 1) = rng.normal();
            const double v = semantic_ce_probabilistic(mu_m, sigma_m, w_m, label, eps).total;
            sum += v;
            sum_sq += v * v;
        }
        const double mean = sum / kDraws;
        const double se = std::sqrt((sum_sq / kDraws - mean * mean) / (kDraws - 1));
        const double quad = oracle::quadrature_prob_ce(mu, sigma, w, y);
        const double z = std::abs(mean - quad) / se;
        ok = ok && z < 3.0;
        detail += (detail.empty() ? "" : "; ") + std::string("y=") + std::to_string(y) + " mc " + fmt(mean) + " quad " + fmt(quad) +
                  " (" + fmt(z) + " se)";
    }
    return {ok, detail};
}

double mean_acer(const NoiseSetting& noise, Arm arm) {
    double sum = 0.0;
    for (uint64_t seed = 1; seed <= kSeeds; ++seed) {
        const BenchmarkData b = make_noisy_benchmark(BenchmarkSpec{}, noise, seed);
        sum += run_arm(b.train, b.test, benchmark_config(seed), arm).report.acer;
    }
    return sum / kSeeds;
}

Outcome label_quality() {
    bool ok = true;
    std::string detail;
    for (double f : {0.2, 0.5}) {
        const double s = mean_acer(NoiseSetting{f, 0.0, 0.0}, Arm::s);
        const double lq = mean_acer(NoiseSetting{f, 0.0, 0.0}, Arm::s_lq);
        ok = ok && lq <= s;
        detail += (detail.empty() ? "" : "; ") + fmt(f * 100) + "% noise: +S " + fmt(s) + " +S+LQ " + fmt(lq);
    }
    return {ok, detail + " (mean ACER %, " + std::to_string(kSeeds) + " seeds)"};
}

Outcome data_quality() {
    int separated = 0;
    double sum_uncorrected = 0.0, sum_corrected = 0.0;
    size_t candidates = 0;
    for (uint64_t seed = 1; seed <= kSeeds; ++seed) {
        const BenchmarkData b = make_noisy_benchmark(BenchmarkSpec{}, NoiseSetting{0.0, 0.0, 0.3}, seed);
        const TrainResult tr = train_full_dpm(b.train, benchmark_config(seed));
        const QualityReport q = quality_report(tr.params, b.train);
        separated += q.mean_corrupted > q.mean_clean;
        // Corrupted live test samples are the ones a false reject can hit.
        const auto pu = predict_dataset(tr.params, b.test, false);
        const auto pc = predict_dataset(tr.params, b.test, true);
        for (size_t i = 0; i < b.test.size(); ++i) {
            const Sample& s = b.test.samples[i];
            if (s.c != kLive || !s.flags.data_corrupted) continue;
            sum_uncorrected += pu[i].confidence();
            sum_corrected += pc[i].confidence();
            ++candidates;
        }
    }
    const double mu_u = sum_uncorrected / static_cast<double>(candidates);
    const double mu_c = sum_corrected / static_cast<double>(candidates);
    return {separated >= 4 && candidates > 0 && mu_c < mu_u,
            "sigma_D^2 higher on corrupted in " + std::to_string(separated) + "/" + std::to_string(kSeeds) + " seeds; confidence on " +
                std::to_string(candidates) + " corrupted live samples " + fmt(mu_u) + " -> " + fmt(mu_c)};
}

Outcome ablation_order() {
    const NoiseSetting noise{0.2, 0.0, 0.2};
    std::vector<double> acers;
    std::string detail;
    for (Arm arm : all_arms()) {
        acers.push_back(mean_acer(noise, arm));
        detail += (detail.empty() ? "" : " -> ") + to_string(arm) + " " + fmt(acers.back());
    }
    bool ok = true;
    for (size_t i = 1; i < acers.size(); ++i) ok = ok && acers[i] <= acers[i - 1];
    return {ok, detail + " (mean ACER %, " + std::to_string(kSeeds) + " seeds)"};
}

Outcome metric_oracles() {
    Rng rng(8);
    size_t mismatches = 0;
    for (int t = 0; t < 100; ++t) {
        const size_t n = 2 + rng.below(300);
        std::vector<double> scores;
        std::vector<int> y;
        for (size_t i = 0; i < n; ++i) {
            const int c = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(2));
            double v = std::clamp(0.5 + 0.3 * rng.normal() + (c == kLive ? 0.1 : -0.1), 0.0, 1.0);
            if (t % 2) v = std::round(v * 20.0) / 20.0;
            scores.push_back(v);
            y.push_back(c);
        }
        for (double target : {0.01, 0.1, 0.3}) {
            const TprAtFpr a = tpr_at_fpr(scores, y, target);
            const oracle::BruteTpr b = oracle::brute_tpr_at_fpr(scores, y, target);
            mismatches += a.tpr != b.tpr || a.threshold != b.threshold;
        }
        mismatches += std::abs(roc_auc(roc_sweep(scores, y)) - oracle::pairwise_auc(scores, y)) > 1e-12;
    }
    const double fixed = acer(2.29, 0.96);
    return {mismatches == 0 && std::abs(fixed - 1.625) <= kIdentityTol,
            std::to_string(mismatches) + " mismatches over 100 instances; ACER(2.29, 0.96) = " + fmt(fixed)};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream is(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        out[fs::relative(e.path(), dir).generic_string()] = ss.str();
    }
    return out;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DPM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reproducible_pipeline() {
    const fs::path root = fs::temp_directory_path() / ("dpm_acceptance_" + std::to_string(::getpid()));
    const std::string r = root.string();
    auto pipeline = [&] {
        fs::remove_all(root);
        fs::create_directories(root);
        if (run_cli("gen-data --n 50 --dim 8 --semantic-noise 0.2 --data-noise 0.2 --seed 11 --out " + r + "/data")) return false;
        if (run_cli("train --data " + r + "/data/train.dpm --arm s-lq-dq --seed 11 --out " + r + "/train")) return false;
        return run_cli("eval --checkpoint " + r + "/train/checkpoint.dpm --data " + r + "/data/test.dpm --out " + r + "/eval") == 0;
    };
    const bool first_ok = pipeline();
    const auto first = snapshot(root);
    const bool second_ok = pipeline();
    const auto second = snapshot(root);
    fs::remove_all(root);
    if (!first_ok || !second_ok) return {false, "pipeline command failed"};
    size_t differing = 0;
    for (const auto& [name, bytes] : first) differing += !second.count(name) || second.at(name) != bytes;
    return {differing == 0 && first.size() == second.size(),
            std::to_string(first.size()) + " files compared, " + std::to_string(differing) + " differ"};
}

struct Criterion {
    int id;
    std::string name;
    double time_limit_s;  // <= 0: none
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "gradient checks", 60.0, gradients},
        {2, "reduction identities", 0.0, reductions},
        {3, "data-quality loss minimum", 0.0, dq_minimum},
        {4, "Monte-Carlo vs quadrature", 60.0, monte_carlo},
        {5, "label-quality under semantic noise", 600.0, label_quality},
        {6, "data-quality separation and damping", 0.0, data_quality},
        {7, "ablation ordering", 0.0, ablation_order},
        {8, "metric oracles", 0.0, metric_oracles},
        {9, "reproducible pipeline", 0.0, reproducible_pipeline},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.time_limit_s > 0 && secs > c.time_limit_s) {
            o.pass = false;
            o.detail += "; over the " + fmt(c.time_limit_s) + " s budget";
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail << " [" << fmt(secs)
                  << " s]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
