#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "cil/corpus.hpp"
#include "cil/error.hpp"
#include "cil/features.hpp"
#include "cil/hash.hpp"
#include "cil/model.hpp"
#include "cil/strategies.hpp"

namespace cil {

// Everything one training run needs. Seeds for session building and training
// default to the run seed when the config file leaves them out.
struct RunConfig {
    std::string corpus_path;
    std::string manifest_path;  // optional; when set, sessions come from here
    std::uint64_t seed = 0;
    std::string output_dir = "runs";
    int hidden_dim = 64;  // 0 degrades the trunk to identity
    SessionSpec sessions;
    FeaturizerConfig featurizer;
    TrainConfig train;
    StrategyConfig strategy;

    void validate() const {
        if (corpus_path.empty() && manifest_path.empty())
            throw DataError("run config: either corpus or manifest must be set");
        if (hidden_dim < 0) throw DataError("run config: hidden_dim must be >= 0");
        if (manifest_path.empty()) sessions.validate();  // sessions come prebuilt otherwise
        featurizer.validate();
        train.validate();
        strategy.validate();
    }
};

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    return {{"corpus", cfg.corpus_path},
            {"manifest", cfg.manifest_path},
            {"seed", cfg.seed},
            {"output_dir", cfg.output_dir},
            {"hidden_dim", cfg.hidden_dim},
            {"sessions",
             {{"ratios", cfg.sessions.ratios},
              {"seed", cfg.sessions.seed},
              {"split_fractions", cfg.sessions.split_fractions}}},
            {"featurizer", featurizer_to_json(cfg.featurizer)},
            {"train",
             {{"learning_rate", cfg.train.learning_rate},
              {"epochs", cfg.train.epochs},
              {"batch_size", cfg.train.batch_size},
              {"weight_decay", cfg.train.weight_decay},
              {"seed", cfg.train.seed}}},
            {"strategy",
             {{"name", strategy_name(cfg.strategy)},
              {"lambda_reg", cfg.strategy.lambda_reg},
              {"lambda_distill", cfg.strategy.lambda_distill},
              {"distill_temperature", cfg.strategy.distill_temperature}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& doc) {
    RunConfig cfg;
    if (doc.contains("corpus")) cfg.corpus_path = doc.at("corpus").get<std::string>();
    if (doc.contains("manifest")) cfg.manifest_path = doc.at("manifest").get<std::string>();
    if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("output_dir")) cfg.output_dir = doc.at("output_dir").get<std::string>();
    if (doc.contains("hidden_dim")) cfg.hidden_dim = doc.at("hidden_dim").get<int>();

    if (doc.contains("sessions")) {
        const auto& s = doc.at("sessions");
        if (s.contains("ratios")) cfg.sessions.ratios = s.at("ratios").get<std::vector<double>>();
        cfg.sessions.seed = s.contains("seed") ? s.at("seed").get<std::uint64_t>() : cfg.seed;
        if (s.contains("split_fractions"))
            cfg.sessions.split_fractions = s.at("split_fractions").get<std::array<double, 3>>();
    } else {
        cfg.sessions.seed = cfg.seed;
    }

    if (doc.contains("featurizer")) {
        // Accept a partial featurizer section by layering it over defaults.
        nlohmann::json merged = featurizer_to_json(FeaturizerConfig{});
        merged.update(doc.at("featurizer"));
        cfg.featurizer = featurizer_from_json(merged);
    }

    if (doc.contains("train")) {
        const auto& t = doc.at("train");
        if (t.contains("learning_rate")) cfg.train.learning_rate = t.at("learning_rate").get<double>();
        if (t.contains("epochs")) cfg.train.epochs = t.at("epochs").get<int>();
        if (t.contains("batch_size")) cfg.train.batch_size = t.at("batch_size").get<int>();
        if (t.contains("weight_decay")) cfg.train.weight_decay = t.at("weight_decay").get<double>();
        cfg.train.seed = t.contains("seed") ? t.at("seed").get<std::uint64_t>() : cfg.seed;
    } else {
        cfg.train.seed = cfg.seed;
    }

    if (doc.contains("strategy")) {
        const auto& s = doc.at("strategy");
        if (s.contains("name")) cfg.strategy = parse_strategy(s.at("name").get<std::string>());
        if (s.contains("lambda_reg")) cfg.strategy.lambda_reg = s.at("lambda_reg").get<double>();
        if (s.contains("lambda_distill")) cfg.strategy.lambda_distill = s.at("lambda_distill").get<double>();
        if (s.contains("distill_temperature"))
            cfg.strategy.distill_temperature = s.at("distill_temperature").get<double>();
    }
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("config parse error: " + std::string(e.what()));
    }
    return run_config_from_json(doc);
}

// Experiment identity hash, embedded in every artifact. It covers the data
// source, session layout, featurizer, and training regime. The strategy and
// the seeds are deliberately outside it: runs that differ only in those are
// the comparable units of an experiment (compare refuses mixed hashes), while
// resume safety is handled by the exact config comparison against run.json.
inline std::string config_hash(const RunConfig& cfg) {
    nlohmann::json doc = run_config_to_json(cfg);
    doc.erase("output_dir");
    doc.erase("strategy");
    doc.erase("seed");
    doc["sessions"].erase("seed");
    doc["train"].erase("seed");
    return sha256_hex(doc.dump());
}

// Full-config document used for resume identity checks; only output location
// is ignored.
inline nlohmann::json resume_identity(const RunConfig& cfg) {
    nlohmann::json doc = run_config_to_json(cfg);
    doc.erase("output_dir");
    return doc;
}

}  // namespace cil
