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

// dpm: experiment runner for the synthetic benchmark.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 training divergence.

#include "dpm/dpm.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

/// "3..7" or "1,4,9".
std::vector<uint64_t> parse_seed_list(const std::string& text) {
    std::vector<uint64_t> seeds;
    if (auto dots = text.find(".."); dots != std::string::npos) {
        uint64_t lo = 0, hi = 0;
        if (!dpm::parse_int(std::string_view(text).substr(0, dots), lo) ||
            !dpm::parse_int(std::string_view(text).substr(dots + 2), hi) || hi < lo)
            throw dpm::ConfigError("bad seed range '" + text + "' (expected LO..HI)");
        for (uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    for (auto part : dpm::split(text, ',')) {
        uint64_t s = 0;
        if (!dpm::parse_int(part, s)) throw dpm::ConfigError("bad seed '" + std::string(part) + "'");
        seeds.push_back(s);
    }
    return seeds;
}

std::vector<double> parse_real_list(const std::string& text) {
    std::vector<double> out;
    for (auto part : dpm::split(text, ',')) {
        double v = 0;
        if (!dpm::parse_real(part, v)) throw dpm::ConfigError("bad number '" + std::string(part) + "'");
        out.push_back(v);
    }
    return out;
}

json config_json(const dpm::TrainConfig& cfg) {
    json j = json::object();
    for (const auto& [k, v] : dpm::config_entries(cfg)) j[k] = v;
    return j;
}

/// Output directory written under a temporary name and renamed on success,
/// so a directory that exists under its final name is always complete.
class OutputDir {
public:
    explicit OutputDir(fs::path final_path) : final_(std::move(final_path)), staging_(final_.string() + ".partial") {
        if (fs::exists(final_)) throw dpm::DataError("output directory '" + final_.string() + "' already exists");
        fs::remove_all(staging_);
        fs::create_directories(staging_);
    }
    OutputDir(const OutputDir&) = delete;
    OutputDir& operator=(const OutputDir&) = delete;
    ~OutputDir() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    fs::path file(const std::string& name) {
        files_.push_back(name);
        return staging_ / name;
    }

    void write_text(const std::string& name, const std::string& text) {
        std::ofstream os(file(name), std::ios::binary);
        os << text;
        if (!os) throw dpm::DataError("cannot write '" + name + "'");
    }

    void write_json(const std::string& name, const json& j) { write_text(name, j.dump(2) + "\n"); }

    void commit(json manifest) {
        manifest["output_dir"] = final_.generic_string();
        manifest["outputs"] = files_;
        write_json("manifest.json", manifest);
        fs::rename(staging_, final_);
        committed_ = true;
    }

private:
    fs::path final_;
    fs::path staging_;
    std::vector<std::string> files_;
    bool committed_ = false;
};

fs::path resolve_out(const std::string& out, const std::string& command) {
    if (!out.empty()) return out;
    const char* root = std::getenv("DPM_OUT_ROOT");
    return fs::path(root && *root ? root : "runs") / command;
}

json manifest_for(const std::string& command) {
    json m;
    m["experiment"] = command;
    m["version"] = "0.1.0";
    return m;
}

// Options shared by commands that build the benchmark.
struct BenchmarkFlags {
    int n = 200;
    int spoof_types = 3;
    int dim = 16;
    double overlap = 0.0;
    double severity = 2.0;

    void add(CLI::App* cmd) {
        cmd->add_option("--n", n, "Samples per cluster (live, and each spoof type)")->check(CLI::PositiveNumber);
        cmd->add_option("--spoof-types", spoof_types, "Number of spoof types")->check(CLI::Range(2, 1000));
        cmd->add_option("--dim", dim, "Feature dimension")->check(CLI::Range(2, 100000));
        cmd->add_option("--overlap", overlap, "Cluster overlap (>= 0)")->check(CLI::NonNegativeNumber);
        cmd->add_option("--severity", severity, "Data-noise severity (stddev of added noise)")->check(CLI::NonNegativeNumber);
    }

    dpm::BenchmarkSpec spec() const {
        dpm::BenchmarkSpec s;
        s.n_per_class = n;
        s.spoof_types = spoof_types;
        s.dim = dim;
        s.overlap = overlap;
        s.data_noise_severity = severity;
        return s;
    }

    json to_json() const {
        return json{{"n_per_class", n}, {"spoof_types", spoof_types}, {"dim", dim}, {"overlap", overlap}, {"severity", severity}};
    }
};

dpm::TrainConfig resolve_config(const std::string& path, std::optional<uint64_t> seed) {
    dpm::TrainConfig cfg = path.empty() ? dpm::benchmark_config() : dpm::load_config(path, dpm::benchmark_config());
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
}

json report_delta(const dpm::EvalReport& corrected, const dpm::EvalReport& uncorrected) {
    json d;
    d["apcer"] = corrected.apcer - uncorrected.apcer;
    d["bpcer"] = corrected.bpcer - uncorrected.bpcer;
    d["acer"] = corrected.acer - uncorrected.acer;
    d["hter"] = corrected.hter - uncorrected.hter;
    d["auc"] = corrected.auc - uncorrected.auc;
    json t = json::array();
    for (const auto& [fpr, v] : corrected.tpr_at_fpr) t.push_back({{"fpr_target", fpr}, {"tpr", v.tpr - uncorrected.tpr_at_fpr.at(fpr).tpr}});
    d["tpr_at_fpr"] = t;
    d["note"] = "corrected minus uncorrected";
    return d;
}

std::string predictions_csv(const std::vector<dpm::Prediction>& preds) {
    std::ostringstream os;
    dpm::write_predictions(os, dpm::to_records(preds));
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual probabilistic modeling experiments on synthetic live/spoof data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "dpm 0.1.0");

    std::string out;
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string seeds_text = "1..5";
    std::string data_path;
    std::string checkpoint_path;
    double threshold = 0.5;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with optional noise");
    BenchmarkFlags gen_flags;
    gen_flags.add(gen);
    double semantic_noise = 0.0, binary_noise = 0.0, data_noise = 0.0, test_fraction = 0.5;
    gen->add_option("--seed", seed, "Generator seed");
    gen->add_option("--out", out, "Output directory");
    gen->add_option("--semantic-noise", semantic_noise, "Fraction of spoof-type labels re-drawn (train split)")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--binary-noise", binary_noise, "Fraction of live/spoof labels flipped (train split)")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--data-noise", data_noise, "Fraction of samples corrupted (both splits)")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--test-fraction", test_fraction, "Held-out fraction; 0 writes a single unsplit dataset")->check(CLI::Range(0.0, 0.99));

    // train
    auto* train = app.add_subcommand("train", "Train one ablation arm");
    std::string arm_text = "s-lq-dq";
    train->add_option("--data", data_path, "Training dataset")->required();
    train->add_option("--config", config_path, "Config file (key = value)");
    train->add_option("--seed", seed, "Overrides the config seed");
    train->add_option("--arm", arm_text, "baseline | s | s-lq | s-lq-dq");
    train->add_option("--out", out, "Output directory");

    // eval
    auto* eval = app.add_subcommand("eval", "Score a checkpoint with and without confidence correction");
    eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    eval->add_option("--data", data_path, "Evaluation dataset")->required();
    eval->add_option("--threshold", threshold, "Accept as live when p_live >= threshold")->check(CLI::Range(0.0, 1.0));
    eval->add_option("--out", out, "Output directory");

    // predict
    auto* predict = app.add_subcommand("predict", "Write per-sample predictions");
    bool corrected = true;
    predict->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    predict->add_option("--data", data_path, "Dataset")->required();
    predict->add_flag("--corrected,!--uncorrected", corrected, "Use the quality-corrected confidence (default)");
    predict->add_option("--out", out, "Output directory");

    // noise-sweep
    auto* sweep = app.add_subcommand("noise-sweep", "ACER of each arm across noise fractions and seeds");
    BenchmarkFlags sweep_flags;
    sweep_flags.add(sweep);
    std::vector<std::string> kinds_text{"semantic"};
    std::vector<std::string> arms_text;
    std::string fractions_text;
    sweep->add_option("--noise-kind", kinds_text, "semantic | binary | data (repeatable)");
    sweep->add_option("--fractions", fractions_text, "Comma-separated fractions (default depends on kind)");
    sweep->add_option("--seeds", seeds_text, "Seed range LO..HI or list a,b,c");
    sweep->add_option("--arm", arms_text, "Restrict to these arms (repeatable)");
    sweep->add_option("--config", config_path, "Base config file");
    sweep->add_option("--threshold", threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));
    sweep->add_option("--out", out, "Output directory");

    // quality-report
    auto* quality = app.add_subcommand("quality-report", "Per-sample data-quality variance with corruption provenance");
    int bins = 20;
    quality->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    quality->add_option("--data", data_path, "Dataset")->required();
    quality->add_option("--bins", bins, "Histogram bins")->check(CLI::PositiveNumber);
    quality->add_option("--out", out, "Output directory");

    // generalized
    auto* general = app.add_subcommand("generalized", "Tagger, self-labeling and the four arms on self-labeled data");
    BenchmarkFlags general_flags;
    general_flags.add(general);
    double general_noise = 0.2;
    general->add_option("--seeds", seeds_text, "Seed range LO..HI or list a,b,c");
    general->add_option("--config", config_path, "Base config file");
    general->add_option("--data-noise", general_noise, "Data-noise fraction on the label-deficient splits")->check(CLI::Range(0.0, 1.0));
    general->add_option("--threshold", threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));
    general->add_option("--out", out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*gen) {
            const uint64_t s = seed.value_or(0);
            const dpm::BenchmarkSpec spec = gen_flags.spec();
            OutputDir dir(resolve_out(out, "gen-data"));
            json m = manifest_for("gen-data");
            m["seeds"] = {s};
            m["benchmark"] = gen_flags.to_json();
            m["noise"] = {{"semantic", semantic_noise}, {"binary", binary_noise}, {"data", data_noise}};
            if (test_fraction == 0.0) {
                dpm::Dataset ds = dpm::generate_synthetic(spec.n_per_class, spec.dim, spec.categories(), spec.overlap, s, spec.generator);
                ds = dpm::apply_noise(std::move(ds), {semantic_noise, binary_noise, data_noise, spec.data_noise_severity, spec.overlap}, s);
                dpm::save_dataset(ds, dir.file("data.dpm").string());
                m["datasets"] = {{"data.dpm", ds.size()}};
                std::cout << "seed " << s << ": wrote " << ds.size() << " samples\n";
            } else {
                dpm::BenchmarkSpec split = spec;
                split.test_fraction = test_fraction;
                const dpm::BenchmarkData b =
                    dpm::make_noisy_benchmark(split, dpm::NoiseSetting{semantic_noise, binary_noise, data_noise}, s);
                dpm::save_dataset(b.train, dir.file("train.dpm").string());
                dpm::save_dataset(b.test, dir.file("test.dpm").string());
                m["test_fraction"] = test_fraction;
                m["datasets"] = {{"train.dpm", b.train.size()}, {"test.dpm", b.test.size()}};
                std::cout << "seed " << s << ": wrote " << b.train.size() << " train + " << b.test.size() << " test samples\n";
            }
            dir.commit(m);
        } else if (*train) {
            const dpm::Dataset ds = dpm::load_dataset(data_path);
            const dpm::Arm arm = dpm::parse_arm(arm_text);
            const dpm::TrainConfig cfg = dpm::apply_arm(resolve_config(config_path, seed), arm);
            OutputDir dir(resolve_out(out, "train"));
            const dpm::TrainResult r = dpm::train_full_dpm(ds, cfg);
            dpm::save_checkpoint(dir.file("checkpoint.dpm").string(), r.params, cfg, ds.categories);
            {
                std::ofstream log(dir.file("train_log.jsonl"), std::ios::binary);
                dpm::write_train_log(log, r.log);
            }
            dir.write_text("config.txt", dpm::format_config(cfg));
            json m = manifest_for("train");
            m["arm"] = dpm::to_string(arm);
            m["config_path"] = config_path;
            m["config"] = config_json(cfg);
            m["datasets"] = {data_path};
            m["seeds"] = {cfg.seed};
            json prov = json::object();
            for (const auto& c : ds.categories) prov[c.name] = dpm::to_string(c.provenance);
            m["label_provenance"] = prov;
            m["final_train_accuracy"] = r.log.epochs.empty() ? 0.0 : r.log.epochs.back().train_accuracy;
            dir.commit(m);
            std::cout << "trained arm " << dpm::to_string(arm) << " for " << r.log.epochs.size() << " epochs\n";
        } else if (*eval) {
            const dpm::Dataset ds = dpm::load_dataset(data_path);
            const dpm::Checkpoint ck = dpm::load_checkpoint(checkpoint_path, std::nullopt, ds.feature_dim);
            OutputDir dir(resolve_out(out, "eval"));
            const auto pu = dpm::predict_dataset(ck.params, ds, false);
            const auto pc = dpm::predict_dataset(ck.params, ds, true);
            const dpm::EvalReport ru = dpm::evaluate_predictions(pu, ds, threshold);
            const dpm::EvalReport rc = dpm::evaluate_predictions(pc, ds, threshold);
            dir.write_json("report_uncorrected.json", dpm::to_json(ru));
            dir.write_json("report_corrected.json", dpm::to_json(rc));
            dir.write_json("report_delta.json", report_delta(rc, ru));
            dir.write_text("predictions_uncorrected.csv", predictions_csv(pu));
            dir.write_text("predictions_corrected.csv", predictions_csv(pc));
            json m = manifest_for("eval");
            m["checkpoint"] = checkpoint_path;
            m["datasets"] = {data_path};
            m["threshold"] = threshold;
            m["config"] = config_json(ck.config);
            dir.commit(m);
            std::cout << "ACER uncorrected " << dpm::format_real(ru.acer) << "%, corrected " << dpm::format_real(rc.acer) << "%\n";
            for (const auto& w : rc.warnings) std::cerr << "warning: " << w << '\n';
        } else if (*predict) {
            const dpm::Dataset ds = dpm::load_dataset(data_path);
            const dpm::Checkpoint ck = dpm::load_checkpoint(checkpoint_path, std::nullopt, ds.feature_dim);
            OutputDir dir(resolve_out(out, "predict"));
            dir.write_text("predictions.csv", predictions_csv(dpm::predict_dataset(ck.params, ds, corrected)));
            json m = manifest_for("predict");
            m["checkpoint"] = checkpoint_path;
            m["datasets"] = {data_path};
            m["corrected"] = corrected;
            dir.commit(m);
        } else if (*sweep) {
            dpm::SweepSpec spec;
            spec.benchmark = sweep_flags.spec();
            spec.base = resolve_config(config_path, std::nullopt);
            spec.kinds.clear();
            for (const auto& k : kinds_text) spec.kinds.push_back(dpm::parse_noise_kind(k));
            if (!fractions_text.empty()) spec.fractions = parse_real_list(fractions_text);
            if (!arms_text.empty()) {
                spec.arms.clear();
                for (const auto& a : arms_text) spec.arms.push_back(dpm::parse_arm(a));
            }
            spec.seeds = parse_seed_list(seeds_text);
            spec.threshold = threshold;
            OutputDir dir(resolve_out(out, "noise-sweep"));
            const auto rows = dpm::run_noise_sweep(spec);
            {
                std::ofstream os(dir.file("sweep_rows.csv"), std::ios::binary);
                dpm::write_sweep_rows(os, rows);
            }
            {
                std::ofstream os(dir.file("sweep_summary.csv"), std::ios::binary);
                dpm::write_sweep_summary(os, dpm::summarize_sweep(rows));
            }
            json m = manifest_for("noise-sweep");
            m["config_path"] = config_path;
            m["config"] = config_json(spec.base);
            m["benchmark"] = sweep_flags.to_json();
            m["noise_kinds"] = kinds_text;
            m["seeds"] = spec.seeds;
            m["rows"] = rows.size();
            dir.commit(m);
            std::cout << "wrote " << rows.size() << " sweep rows\n";
        } else if (*quality) {
            const dpm::Dataset ds = dpm::load_dataset(data_path);
            const dpm::Checkpoint ck = dpm::load_checkpoint(checkpoint_path, std::nullopt, ds.feature_dim);
            const dpm::QualityReport rep = dpm::quality_report(ck.params, ds, bins);
            OutputDir dir(resolve_out(out, "quality-report"));
            {
                std::ofstream os(dir.file("quality.csv"), std::ios::binary);
                dpm::write_quality_rows(os, rep.rows);
            }
            {
                std::ofstream os(dir.file("quality_histogram.csv"), std::ios::binary);
                dpm::write_quality_histogram(os, rep.histogram);
            }
            auto mean_or_null = [](size_t n, double v) { return n ? json(v) : json(nullptr); };
            dir.write_json("quality_summary.json", json{{"n_clean", rep.n_clean},
                                                        {"n_corrupted", rep.n_corrupted},
                                                        {"mean_sigma_d_sq_clean", mean_or_null(rep.n_clean, rep.mean_clean)},
                                                        {"mean_sigma_d_sq_corrupted", mean_or_null(rep.n_corrupted, rep.mean_corrupted)}});
            json m = manifest_for("quality-report");
            m["checkpoint"] = checkpoint_path;
            m["datasets"] = {data_path};
            m["bins"] = bins;
            dir.commit(m);
            std::cout << "mean sigma_D^2: clean " << dpm::format_real(rep.mean_clean) << ", corrupted "
                      << dpm::format_real(rep.mean_corrupted) << '\n';
        } else if (*general) {
            const dpm::BenchmarkSpec spec = general_flags.spec();
            const dpm::TrainConfig base = resolve_config(config_path, std::nullopt);
            const auto seeds = parse_seed_list(seeds_text);
            OutputDir dir(resolve_out(out, "generalized"));
            std::ostringstream rows;
            rows << "seed,tagger_holdout_accuracy,agreement,arm,acer,apcer,bpcer\n";
            for (uint64_t s : seeds) {
                const dpm::BenchmarkData b = dpm::make_noisy_benchmark(spec, dpm::NoiseSetting{0.0, 0.0, general_noise}, s);
                const dpm::Dataset suf = dpm::make_label_sufficient(spec, s);
                dpm::TrainConfig cfg = base;
                cfg.seed = s;
                dpm::GeneralizedOptions opt;
                opt.compare_arms = true;
                opt.threshold = threshold;
                const auto rep = dpm::run_generalized_pipeline(suf, b.train, b.test, cfg, opt);
                for (const auto& a : rep.arms)
                    rows << s << ',' << dpm::format_real(rep.tagger_holdout_accuracy) << ','
                         << (rep.agreement ? dpm::format_real(*rep.agreement) : "") << ',' << dpm::to_string(a.arm) << ','
                         << dpm::format_real(a.report.acer) << ',' << dpm::format_real(a.report.apcer) << ','
                         << dpm::format_real(a.report.bpcer) << '\n';
            }
            dir.write_text("generalized.csv", rows.str());
            json m = manifest_for("generalized");
            m["config_path"] = config_path;
            m["config"] = config_json(base);
            m["benchmark"] = general_flags.to_json();
            m["seeds"] = seeds;
            m["label_provenance"] = {{dpm::kSpoofCategory, "self_distributed"}};
            dir.commit(m);
        }
    } catch (const dpm::DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const dpm::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const dpm::DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}
