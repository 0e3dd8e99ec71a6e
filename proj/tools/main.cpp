// Command-line front end: build CIL sessions from a corpus, train a strategy
// across sessions, evaluate saved models, and compare strategy reports.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cil/config.hpp"
#include "cil/corpus.hpp"
#include "cil/error.hpp"
#include "cil/eval.hpp"
#include "cil/runner.hpp"
#include "cil/strategies.hpp"
#include "cil/synth.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::vector<double> parse_fraction_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    if (out.empty()) throw cil::UsageError("expected a comma-separated list of fractions: " + csv);
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoull(item));
    }
    if (out.empty()) throw cil::UsageError("expected a comma-separated list of seeds: " + csv);
    return out;
}

// Per-session author/document table in the usual three-row layout: train and
// val rows carry per-session counts, the test row is cumulative.
void print_session_table(const cil::CILData& data, std::ostream& os) {
    const std::size_t n = data.sessions.size();
    auto docs_of = [](const std::vector<cil::AuthorSplit>& split) {
        std::size_t docs = 0;
        for (const auto& a : split) docs += a.texts.size();
        return docs;
    };

    os << std::left << std::setw(4) << "S";
    for (std::size_t s = 0; s < n; ++s) {
        os << std::right << std::setw(7) << ("s" + std::to_string(s)) << std::setw(9) << "";
    }
    os << "\n" << std::setw(4) << "";
    for (std::size_t s = 0; s < n; ++s) os << std::right << std::setw(7) << "A" << std::setw(9) << "D";
    os << "\n";

    os << std::left << std::setw(4) << "TR";
    for (std::size_t s = 0; s < n; ++s)
        os << std::right << std::setw(7) << data.sessions[s].train.size() << std::setw(9)
           << docs_of(data.sessions[s].train);
    os << "\n" << std::left << std::setw(4) << "V";
    for (std::size_t s = 0; s < n; ++s)
        os << std::right << std::setw(7) << data.sessions[s].val.size() << std::setw(9)
           << docs_of(data.sessions[s].val);
    os << "\n" << std::left << std::setw(4) << "TS";
    std::size_t cum_authors = 0, cum_docs = 0;
    for (std::size_t s = 0; s < n; ++s) {
        cum_authors += data.sessions[s].test.size();
        cum_docs += docs_of(data.sessions[s].test);
        os << std::right << std::setw(7) << cum_authors << std::setw(9) << cum_docs;
    }
    os << "\n";
}

std::string timestamp_tag() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y%m%d-%H%M%S");
    return os.str();
}

int cmd_synth_corpus(const std::string& out, const cil::SynthConfig& cfg) {
    const auto docs = cil::generate_synth_corpus(cfg);
    cil::write_jsonl(docs, out);
    std::cout << "wrote " << docs.size() << " documents for " << cfg.authors << " authors to " << out
              << "\n";
    return kExitOk;
}

int cmd_build_sessions(const std::string& corpus_path, const std::string& ratios_csv, std::uint64_t seed,
                       const std::string& split_csv, const std::string& out) {
    cil::SessionSpec spec;
    spec.ratios = parse_fraction_list(ratios_csv);
    spec.seed = seed;
    if (!split_csv.empty()) {
        const auto f = parse_fraction_list(split_csv);
        if (f.size() != 3) throw cil::UsageError("--split needs exactly three fractions");
        spec.split_fractions = {f[0], f[1], f[2]};
    }
    const auto corpus = cil::load_corpus(corpus_path);
    const auto data = cil::build_cil_data(corpus, spec);

    cil::RunConfig hash_cfg;
    hash_cfg.corpus_path = corpus_path;
    hash_cfg.seed = seed;
    hash_cfg.sessions = spec;
    cil::save_manifest(data, out, cil::config_hash(hash_cfg));

    std::cout << "sessions built from " << corpus.authors.size() << " authors, seed " << seed << "\n";
    print_session_table(data, std::cout);
    std::cout << "manifest: " << out << "\n";
    return kExitOk;
}

int cmd_inspect_manifest(const std::string& path) {
    const auto data = cil::load_manifest(path);
    std::cout << "seed " << data.seed << ", prng " << cil::kRngName << ", sessions "
              << data.sessions.size() << ", authors " << data.total_classes() << "\n";
    print_session_table(data, std::cout);
    return kExitOk;
}

struct TrainCliOptions {
    std::string config_path;
    std::string corpus;
    std::string manifest;
    std::string strategy;
    std::string out_dir;
    std::string run_dir;
    std::string seeds_csv;
    std::string ratios_csv;
    std::int64_t seed = -1;
    int epochs = -1;
    double learning_rate = 0.0;
    int batch_size = 0;
    int hidden_dim = -1;
    int resume_from = 0;
};

// Flags beat the config file, which beats defaults.
cil::RunConfig resolve_config(const TrainCliOptions& opt) {
    cil::RunConfig cfg;
    if (!opt.config_path.empty()) cfg = cil::load_run_config(opt.config_path);
    if (!opt.corpus.empty()) cfg.corpus_path = opt.corpus;
    if (!opt.manifest.empty()) cfg.manifest_path = opt.manifest;
    if (!opt.strategy.empty()) {
        const auto parsed = cil::parse_strategy(opt.strategy);
        cfg.strategy.kind = parsed.kind;
        cfg.strategy.k_exemplars = parsed.k_exemplars;
    }
    if (!opt.ratios_csv.empty()) cfg.sessions.ratios = parse_fraction_list(opt.ratios_csv);
    if (opt.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(opt.seed);
        cfg.train.seed = cfg.seed;
        cfg.sessions.seed = cfg.seed;
    }
    if (opt.epochs >= 0) cfg.train.epochs = opt.epochs;
    if (opt.learning_rate > 0.0) cfg.train.learning_rate = opt.learning_rate;
    if (opt.batch_size > 0) cfg.train.batch_size = opt.batch_size;
    if (opt.hidden_dim >= 0) cfg.hidden_dim = opt.hidden_dim;
    if (!opt.out_dir.empty()) cfg.output_dir = opt.out_dir;
    if (const char* env = std::getenv("CIL_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
    return cfg;
}

int run_one_training(cil::RunConfig cfg, const TrainCliOptions& opt) {
    cfg.validate();
    const auto data = cil::load_or_build_sessions(cfg);

    cil::RunPaths paths;
    if (!opt.run_dir.empty()) {
        paths.run_dir = opt.run_dir;
    } else {
        paths.run_dir = std::filesystem::path(cfg.output_dir) /
                        (cil::strategy_name(cfg.strategy) + "-seed" + std::to_string(cfg.seed) + "-" +
                         timestamp_tag());
    }

    std::cout << "run " << cil::strategy_name(cfg.strategy) << " seed " << cfg.seed << " -> "
              << paths.run_dir.string() << "\n";
    const auto result = cil::run_training(cfg, data, paths, opt.resume_from,
                                          [&](int t, const cil::SessionEval& ev) {
                                              std::cout << "  session " << t << ": accuracy "
                                                        << std::fixed << std::setprecision(2)
                                                        << ev.accuracy << " on " << ev.total
                                                        << " cumulative test docs\n";
                                          });
    if (result.report.matrix.acc.size() >= 2)
        std::cout << "  PD " << std::fixed << std::setprecision(2) << result.report.pd << ", AvgA "
                  << result.report.avg_a << "\n";
    return kExitOk;
}

int cmd_train(const TrainCliOptions& opt) {
    const cil::RunConfig base = resolve_config(opt);
    if (opt.seeds_csv.empty()) return run_one_training(base, opt);

    if (opt.resume_from != 0) throw cil::UsageError("--resume-from cannot be combined with --seeds");
    if (!opt.run_dir.empty()) throw cil::UsageError("--run-dir cannot be combined with --seeds");
    for (const auto seed : parse_seed_list(opt.seeds_csv)) {
        cil::RunConfig cfg = base;
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.sessions.seed = seed;
        const int rc = run_one_training(cfg, opt);
        if (rc != kExitOk) return rc;
    }
    return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& manifest_path, int session,
             const std::string& out_path) {
    const auto loaded = cil::load_model(model_path);
    const auto data = cil::load_manifest(manifest_path);
    const int t = session >= 0 ? session : loaded.session;
    if (t < 0 || t >= static_cast<int>(data.sessions.size()))
        throw cil::UsageError("--session out of range for this manifest");

    const auto ev = cil::evaluate(loaded.model, loaded.featurizer, data, static_cast<std::size_t>(t));
    std::cout << "session " << t << ": accuracy " << std::fixed << std::setprecision(2) << ev.accuracy
              << " over " << ev.total << " docs\n";
    for (std::size_t s = 0; s < ev.per_origin.size(); ++s)
        std::cout << "  origin s" << s << ": " << std::fixed << std::setprecision(2) << ev.per_origin[s]
                  << "\n";
    if (!out_path.empty()) {
        nlohmann::json doc{{"t", t},
                           {"accuracy", ev.accuracy},
                           {"per_origin", ev.per_origin},
                           {"total", ev.total},
                           {"correct", ev.correct},
                           {"config_hash", loaded.config_hash}};
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw cil::DataError("cannot write " + out_path);
        out << doc.dump(2) << "\n";
    }
    return kExitOk;
}

int cmd_compare(const std::vector<std::string>& report_paths, const std::string& format, bool force,
                const std::string& out_path) {
    if (report_paths.empty()) throw cil::UsageError("compare needs at least one report");
    std::vector<cil::EvalReport> reports;
    for (const auto& path : report_paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw cil::DataError("cannot open report: " + path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw cil::DataError("report parse error in " + path + ": " + e.what());
        }
        reports.push_back(cil::report_from_json(doc));
    }
    const std::size_t sessions = reports.front().matrix.acc.size();
    for (const auto& r : reports) {
        if (r.matrix.acc.size() != sessions)
            throw cil::DataError("mismatched session counts across reports");
        if (!force && r.config_hash != reports.front().config_hash)
            throw cil::DataError("mixed config hashes across reports (use --force to override)");
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < reports.size(); ++i)
        if (reports[i].pd < reports[best].pd) best = i;

    std::ostringstream table;
    auto cell = [](double v) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(2) << v;
        return os.str();
    };
    if (format == "markdown") {
        table << "| strategy | seed |";
        for (std::size_t s = 0; s < sessions; ++s) table << " s" << s << " |";
        table << " PD | AvgA |\n|---|---|";
        for (std::size_t s = 0; s < sessions; ++s) table << "---|";
        table << "---|---|\n";
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const auto& r = reports[i];
            table << "| " << r.strategy << " | " << r.seed << " |";
            for (double a : r.matrix.acc) table << " " << cell(a) << " |";
            const std::string pd = cell(r.pd);
            table << " " << (i == best && reports.size() > 1 ? "**" + pd + "**" : pd) << " | "
                  << cell(r.avg_a) << " |\n";
        }
    } else if (format == "csv") {
        table << "strategy,seed";
        for (std::size_t s = 0; s < sessions; ++s) table << ",s" << s;
        table << ",pd,avg_a\n";
        for (const auto& r : reports) {
            table << r.strategy << "," << r.seed;
            for (double a : r.matrix.acc) table << "," << cell(a);
            table << "," << cell(r.pd) << "," << cell(r.avg_a) << "\n";
        }
    } else {
        throw cil::UsageError("unknown format: " + format);
    }

    std::cout << table.str();
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw cil::DataError("cannot write " + out_path);
        out << table.str();
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-incremental authorship attribution harness"};
    app.require_subcommand(1);

    // synth-corpus
    auto* synth = app.add_subcommand("synth-corpus", "generate a separable synthetic corpus");
    cil::SynthConfig synth_cfg;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output JSONL path")->required();
    synth->add_option("--authors", synth_cfg.authors, "number of authors");
    synth->add_option("--docs", synth_cfg.docs_per_author, "documents per author");
    synth->add_option("--tokens", synth_cfg.tokens_per_doc, "tokens per document");
    synth->add_option("--vocab", synth_cfg.vocab_per_author, "private vocabulary size per author");
    synth->add_option("--shared", synth_cfg.shared_vocab, "shared vocabulary size");
    synth->add_option("--overlap", synth_cfg.overlap, "probability of drawing a shared token");
    synth->add_option("--seed", synth_cfg.seed, "generator seed");

    // build-sessions
    auto* build = app.add_subcommand("build-sessions", "partition a corpus into CIL sessions");
    std::string build_corpus, build_ratios, build_split, build_out;
    std::uint64_t build_seed = 0;
    build->add_option("--corpus", build_corpus, "JSONL corpus path")->required();
    build->add_option("--ratios", build_ratios, "comma-separated session author ratios")->required();
    build->add_option("--seed", build_seed, "shuffle seed");
    build->add_option("--split", build_split, "train,val,test fractions (default 0.6,0.2,0.2)");
    build->add_option("--out", build_out, "manifest output path")->required();

    // inspect-manifest
    auto* inspect = app.add_subcommand("inspect-manifest", "summarize a session manifest");
    std::string inspect_path;
    inspect->add_option("--manifest", inspect_path, "manifest path")->required();

    // train
    auto* train = app.add_subcommand("train", "train a strategy across all sessions");
    TrainCliOptions topt;
    train->add_option("--config", topt.config_path, "run config JSON");
    train->add_option("--corpus", topt.corpus, "JSONL corpus path");
    train->add_option("--manifest", topt.manifest, "prebuilt session manifest");
    train->add_option("--strategy", topt.strategy, "FT, FT+, FZ, FZ+, LWF, EWC, MAS, FT_Ek, LWF_Ek");
    train->add_option("--ratios", topt.ratios_csv, "session ratios when building from a corpus");
    train->add_option("--seed", topt.seed, "run seed (overrides config)");
    train->add_option("--seeds", topt.seeds_csv, "comma-separated seeds for a sweep");
    train->add_option("--epochs", topt.epochs, "epochs per session");
    train->add_option("--lr", topt.learning_rate, "learning rate");
    train->add_option("--batch-size", topt.batch_size, "batch size");
    train->add_option("--hidden", topt.hidden_dim, "trunk hidden width (0 = identity trunk)");
    train->add_option("--out", topt.out_dir, "output directory for run folders");
    train->add_option("--run-dir", topt.run_dir, "exact run directory (no timestamp)");
    train->add_option("--resume-from", topt.resume_from, "resume at this session index");

    // eval
    auto* evalc = app.add_subcommand("eval", "evaluate a saved model on a manifest");
    std::string eval_model, eval_manifest, eval_out;
    int eval_session = -1;
    evalc->add_option("--model", eval_model, "model JSON path")->required();
    evalc->add_option("--manifest", eval_manifest, "manifest path")->required();
    evalc->add_option("--session", eval_session, "cumulative session index (default: model's)");
    evalc->add_option("--out", eval_out, "write evaluation JSON here");

    // compare
    auto* compare = app.add_subcommand("compare", "tabulate strategy reports side by side");
    std::vector<std::string> compare_reports;
    std::string compare_format = "markdown";
    std::string compare_out;
    bool compare_force = false;
    compare->add_option("reports", compare_reports, "report.json files")->required();
    compare->add_option("--format", compare_format, "markdown or csv");
    compare->add_flag("--force", compare_force, "allow mixed config hashes");
    compare->add_option("--out", compare_out, "write the table here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth_corpus(synth_out, synth_cfg);
        if (build->parsed()) return cmd_build_sessions(build_corpus, build_ratios, build_seed, build_split, build_out);
        if (inspect->parsed()) return cmd_inspect_manifest(inspect_path);
        if (train->parsed()) return cmd_train(topt);
        if (evalc->parsed()) return cmd_eval(eval_model, eval_manifest, eval_session, eval_out);
        if (compare->parsed()) return cmd_compare(compare_reports, compare_format, compare_force, compare_out);
    } catch (const cil::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const cil::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const cil::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
