#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cil/config.hpp"
#include "cil/corpus.hpp"
#include "cil/error.hpp"
#include "cil/eval.hpp"
#include "cil/features.hpp"
#include "cil/model.hpp"
#include "cil/strategies.hpp"

namespace cil {

struct RunPaths {
    std::filesystem::path run_dir;

    std::filesystem::path model(int session) const {
        return run_dir / ("model_s" + std::to_string(session) + ".json");
    }
    std::filesystem::path state(int session) const {
        return run_dir / ("state_s" + std::to_string(session) + ".json");
    }
    std::filesystem::path report_json() const { return run_dir / "report.json"; }
    std::filesystem::path report_csv() const { return run_dir / "report.csv"; }
    std::filesystem::path confusion_csv() const { return run_dir / "confusion.csv"; }
    std::filesystem::path run_meta() const { return run_dir / "run.json"; }
};

namespace detail {

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

// The featurizer actually used by a run: the configured one, with the word
// vocabulary fitted on session-0 train texts when the channel is enabled but
// unfitted. Deterministic, so resumes re-derive the identical featurizer.
inline FeaturizerConfig resolve_featurizer(const FeaturizerConfig& cfg, const CILData& cil) {
    FeaturizerConfig out = cfg;
    if (out.has_channel(Channel::word_freq) && out.word_vocab.empty()) {
        if (cil.sessions.empty()) throw DataError("cannot fit word vocabulary: no sessions");
        std::vector<std::string> texts;
        for (const auto& author : cil.sessions[0].train)
            texts.insert(texts.end(), author.texts.begin(), author.texts.end());
        out.word_vocab = fit_word_vocab(texts, out.word_vocab_size);
    }
    return out;
}

// Sessions for a run: prebuilt manifest when configured, otherwise built from
// the corpus with the configured session spec.
inline CILData load_or_build_sessions(const RunConfig& cfg) {
    if (!cfg.manifest_path.empty()) return load_manifest(cfg.manifest_path);
    return build_cil_data(load_corpus(cfg.corpus_path), cfg.sessions);
}

struct RunResult {
    EvalReport report;
    int sessions_trained = 0;
};

using SessionCallback = std::function<void(int session, const SessionEval&)>;

// Trains all sessions of `cil` with the configured strategy, evaluating on the
// cumulative test set after each session and persisting per-session artifacts.
// With resume_from > 0, the model/state/report written for session
// resume_from-1 are loaded and training continues from there; the result is
// bit-identical to an uninterrupted run because every stochastic step derives
// its seed from (config seed, session).
inline RunResult run_training(const RunConfig& cfg, const CILData& cil, const RunPaths& paths,
                              int resume_from = 0, const SessionCallback& on_session = {}) {
    cfg.validate();
    const std::string hash = config_hash(cfg);
    const int n_sessions = static_cast<int>(cil.sessions.size());
    if (resume_from < 0 || resume_from >= n_sessions)
        throw UsageError("resume session out of range");

    std::filesystem::create_directories(paths.run_dir);
    const FeaturizerConfig featurizer = resolve_featurizer(cfg.featurizer, cil);

    ModelState model;
    StrategyState state;
    AccuracyMatrix matrix;

    if (resume_from == 0) {
        Rng trunk_rng = derived_rng(cfg.train.seed, "trunk-init");
        model = init_model(featurizer.total_dim(), cfg.hidden_dim, trunk_rng);
    } else {
        // The full config must match what the run directory was created with;
        // the embedded config_hash alone is looser (it admits strategy/seed
        // variation by design).
        std::ifstream min(paths.run_meta(), std::ios::binary);
        if (!min) throw DataError("resume: missing " + paths.run_meta().string());
        nlohmann::json meta;
        min >> meta;
        if (meta.at("resume_identity") != resume_identity(cfg))
            throw DataError("resume: config hash mismatch (run directory was produced by a different config)");

        const LoadedModel loaded = load_model(paths.model(resume_from - 1), featurizer);
        if (!loaded.config_hash.empty() && loaded.config_hash != hash)
            throw DataError("resume: config hash mismatch (model was produced by a different config)");
        model = loaded.model;

        std::ifstream in(paths.state(resume_from - 1), std::ios::binary);
        if (!in) throw DataError("resume: cannot open " + paths.state(resume_from - 1).string());
        nlohmann::json doc;
        in >> doc;
        state = strategy_state_from_json(doc);
        if (state.sessions_trained != resume_from)
            throw DataError("resume: state file covers a different session");

        const EvalReport prior = [&] {
            std::ifstream rin(paths.report_json(), std::ios::binary);
            if (!rin) throw DataError("resume: cannot open " + paths.report_json().string());
            nlohmann::json rdoc;
            rin >> rdoc;
            return report_from_json(rdoc);
        }();
        if (prior.config_hash != hash) throw DataError("resume: report config hash mismatch");
        for (int t = 0; t < resume_from && t < static_cast<int>(prior.matrix.acc.size()); ++t) {
            matrix.acc.push_back(prior.matrix.acc[t]);
            matrix.per_origin.push_back(prior.matrix.per_origin[t]);
        }
    }

    const std::string name = strategy_name(cfg.strategy);
    {
        nlohmann::json meta{{"config", run_config_to_json(cfg)},
                            {"resume_identity", resume_identity(cfg)},
                            {"config_hash", hash},
                            {"strategy", name},
                            {"seed", cfg.seed},
                            {"sessions", n_sessions},
                            {"created_utc", detail::utc_timestamp()}};
        std::ofstream out(paths.run_meta(), std::ios::binary);
        if (!out) throw DataError("cannot write " + paths.run_meta().string());
        out << meta.dump(2) << "\n";
    }

    ConfusionMatrix last_confusion;
    for (int t = resume_from; t < n_sessions; ++t) {
        train_session(model, cfg.strategy, state, cil.sessions[t].train, cfg.train, featurizer);

        const SessionEval ev = evaluate(model, featurizer, cil, static_cast<std::size_t>(t));
        matrix.acc.push_back(ev.accuracy);
        matrix.per_origin.push_back(ev.per_origin);
        last_confusion = ev.confusion;

        save_model(model, featurizer, cil.iid_to_author, paths.model(t), hash, t);
        {
            std::ofstream out(paths.state(t), std::ios::binary);
            if (!out) throw DataError("cannot write " + paths.state(t).string());
            out << strategy_state_to_json(state).dump() << "\n";
        }
        const EvalReport report = finalize_report(name, cfg.seed, hash, matrix, last_confusion);
        export_report(report, paths.report_json(), ReportFormat::json);
        export_report(report, paths.report_csv(), ReportFormat::csv);
        export_confusion_csv(last_confusion, paths.confusion_csv());
        if (on_session) on_session(t, ev);
    }

    RunResult result;
    result.report = finalize_report(name, cfg.seed, hash, matrix, last_confusion);
    result.sessions_trained = n_sessions;
    return result;
}

}  // namespace cil
