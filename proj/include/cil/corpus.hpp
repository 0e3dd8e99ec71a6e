#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cil/error.hpp"
#include "cil/hash.hpp"
#include "cil/rng.hpp"

namespace cil {

inline constexpr int kManifestVersion = 1;

// Minimum documents per author: floor(0.6*5)=3 train, floor(0.2*5)=1 val,
// remainder 1 test. Below 5, the val split would be empty.
inline constexpr std::size_t kMinDocsPerAuthor = 5;

struct DocumentRecord {
    std::string author_id;
    std::string text;
    std::size_t doc_index = 0;  // position within the author's list, file order
};

struct Author {
    std::string author_id;
    std::vector<DocumentRecord> documents;
};

// Raw documents grouped by author, in first-appearance order. The order is
// part of the contract: session building shuffles from this order, so two
// loads of the same file always produce the same starting point.
struct AuthorCorpus {
    std::vector<Author> authors;

    std::size_t total_documents() const {
        std::size_t n = 0;
        for (const auto& a : authors) n += a.documents.size();
        return n;
    }
};

struct SessionSpec {
    std::vector<double> ratios;
    std::uint64_t seed = 0;
    std::array<double, 3> split_fractions{0.6, 0.2, 0.2};

    void validate() const {
        if (ratios.empty()) throw DataError("session spec: ratios must be non-empty");
        double sum = 0;
        for (double r : ratios) {
            if (!(r > 0.0) || r > 1.0) throw DataError("session spec: each ratio must lie in (0, 1]");
            sum += r;
        }
        if (sum > 1.0 + 1e-9) throw DataError("session spec: ratios sum exceeds 1");
        double fsum = 0;
        for (double f : split_fractions) {
            if (f < 0.0 || f > 1.0) throw DataError("session spec: split fractions must lie in [0, 1]");
            fsum += f;
        }
        if (std::abs(fsum - 1.0) > 1e-9) throw DataError("session spec: split fractions must sum to 1");
    }
};

// One author's share of one split within a session.
struct AuthorSplit {
    int iid = 0;
    std::string author_id;
    std::vector<std::string> texts;

    bool operator==(const AuthorSplit&) const = default;
};

struct Session {
    std::vector<AuthorSplit> train;
    std::vector<AuthorSplit> val;
    std::vector<AuthorSplit> test;

    bool operator==(const Session&) const = default;
};

struct CILData {
    std::uint64_t seed = 0;
    std::vector<double> ratios;
    std::array<double, 3> split_fractions{0.6, 0.2, 0.2};
    std::vector<Session> sessions;
    std::vector<std::string> iid_to_author;  // iid -> author_id, encounter order

    bool operator==(const CILData&) const = default;

    int total_classes() const { return static_cast<int>(iid_to_author.size()); }

    // Number of classes present in sessions 0..t inclusive.
    int classes_through(std::size_t t) const {
        int n = 0;
        for (std::size_t s = 0; s <= t && s < sessions.size(); ++s)
            n += static_cast<int>(sessions[s].train.size());
        return n;
    }
};

namespace detail {

inline std::string trim_copy(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n\f\v");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r\n\f\v");
    return s.substr(begin, end - begin + 1);
}

}  // namespace detail

enum class CorpusFormat { jsonl };

// One JSON object per line with required keys author_id (string) and
// text (string). Documents keep file order as doc_index within each author.
inline AuthorCorpus load_corpus(const std::filesystem::path& path, CorpusFormat format = CorpusFormat::jsonl) {
    (void)format;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file: " + path.string());

    AuthorCorpus corpus;
    std::map<std::string, std::size_t> index_of;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim_copy(line).empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("corpus parse error at line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.is_object() || !obj.contains("author_id") || !obj["author_id"].is_string() ||
            !obj.contains("text") || !obj["text"].is_string()) {
            throw DataError("corpus parse error at line " + std::to_string(line_no) +
                            ": expected object with string keys author_id and text");
        }
        const std::string author_id = obj["author_id"].get<std::string>();
        const std::string text = obj["text"].get<std::string>();
        if (detail::trim_copy(text).empty()) {
            throw DataError("corpus parse error at line " + std::to_string(line_no) +
                            ": text is empty after trimming");
        }
        auto it = index_of.find(author_id);
        if (it == index_of.end()) {
            it = index_of.emplace(author_id, corpus.authors.size()).first;
            corpus.authors.push_back(Author{author_id, {}});
        }
        auto& docs = corpus.authors[it->second].documents;
        docs.push_back(DocumentRecord{author_id, text, docs.size()});
    }
    if (corpus.authors.empty()) throw DataError("empty corpus: " + path.string());

    std::vector<std::string> too_small;
    for (const auto& a : corpus.authors)
        if (a.documents.size() < kMinDocsPerAuthor) too_small.push_back(a.author_id);
    if (!too_small.empty()) {
        std::ostringstream msg;
        msg << "authors below the " << kMinDocsPerAuthor << "-document minimum:";
        for (const auto& id : too_small) msg << " " << id;
        throw DataError(msg.str());
    }
    return corpus;
}

// Session partitioning. Authors are shuffled once with the seeded generator
// and consumed front-to-back per ratio; each selected author's documents are
// shuffled with the same generator instance, then split by floor(train),
// floor(val), remainder-to-test. iids count up in processing order.
inline CILData build_cil_data(const AuthorCorpus& corpus, const SessionSpec& spec) {
    spec.validate();
    const std::size_t total_authors = corpus.authors.size();

    std::vector<std::size_t> order(total_authors);
    for (std::size_t i = 0; i < total_authors; ++i) order[i] = i;
    Rng rng(spec.seed);
    shuffle(order, rng);

    CILData cil;
    cil.seed = spec.seed;
    cil.ratios = spec.ratios;
    cil.split_fractions = spec.split_fractions;

    std::size_t cursor = 0;
    int iid = 0;
    for (std::size_t s = 0; s < spec.ratios.size(); ++s) {
        const auto take = static_cast<std::size_t>(std::floor(spec.ratios[s] * static_cast<double>(total_authors)));
        if (take < 1)
            throw DataError("session " + std::to_string(s) + ": ratio selects zero authors");
        if (cursor + take > total_authors)
            throw DataError("session " + std::to_string(s) + ": ratios exhaust the author pool");

        Session session;
        for (std::size_t i = 0; i < take; ++i, ++cursor) {
            const Author& author = corpus.authors[order[cursor]];
            std::vector<std::string> texts;
            texts.reserve(author.documents.size());
            for (const auto& d : author.documents) texts.push_back(d.text);
            shuffle(texts, rng);

            const std::size_t n = texts.size();
            const auto n_train = static_cast<std::size_t>(std::floor(spec.split_fractions[0] * static_cast<double>(n)));
            const auto n_val = static_cast<std::size_t>(std::floor(spec.split_fractions[1] * static_cast<double>(n)));
            const std::size_t n_test = n - n_train - n_val;
            if (n_test == 0)
                throw DataError("author " + author.author_id + ": split would leave an empty test partition");

            AuthorSplit train{iid, author.author_id, {texts.begin(), texts.begin() + n_train}};
            AuthorSplit val{iid, author.author_id, {texts.begin() + n_train, texts.begin() + n_train + n_val}};
            AuthorSplit test{iid, author.author_id, {texts.begin() + n_train + n_val, texts.end()}};
            session.train.push_back(std::move(train));
            session.val.push_back(std::move(val));
            session.test.push_back(std::move(test));
            cil.iid_to_author.push_back(author.author_id);
            ++iid;
        }
        cil.sessions.push_back(std::move(session));
    }
    return cil;
}

// Concatenation of test splits of sessions 0..t.
inline std::vector<AuthorSplit> cumulative_test(const CILData& cil, std::size_t t) {
    if (t >= cil.sessions.size())
        throw DataError("cumulative_test: session index " + std::to_string(t) + " out of range");
    std::vector<AuthorSplit> out;
    for (std::size_t s = 0; s <= t; ++s)
        out.insert(out.end(), cil.sessions[s].test.begin(), cil.sessions[s].test.end());
    return out;
}

namespace detail {

inline std::string manifest_checksum(const CILData& cil) {
    Sha256 h;
    for (const auto& session : cil.sessions) {
        for (const auto* split : {&session.train, &session.val, &session.test})
            for (const auto& entry : *split)
                for (const auto& text : entry.texts) h.update(text);
    }
    return h.hex_digest();
}

inline void check_cil_invariants(const CILData& cil) {
    std::set<std::string> seen_authors;
    int expected_iid = 0;
    for (std::size_t s = 0; s < cil.sessions.size(); ++s) {
        const auto& session = cil.sessions[s];
        if (session.train.size() != session.val.size() || session.train.size() != session.test.size())
            throw DataError("manifest: session " + std::to_string(s) + " split author counts disagree");
        for (std::size_t i = 0; i < session.train.size(); ++i) {
            const std::string& id = session.train[i].author_id;
            if (!seen_authors.insert(id).second)
                throw DataError("manifest: disjointness violated, author " + id + " appears in two sessions");
            if (session.train[i].iid != expected_iid || session.val[i].iid != expected_iid ||
                session.test[i].iid != expected_iid)
                throw DataError("manifest: iids are not consecutive in processing order");
            if (session.test[i].texts.empty())
                throw DataError("manifest: author " + id + " has an empty test split");
            ++expected_iid;
        }
    }
    if (static_cast<int>(cil.iid_to_author.size()) != expected_iid)
        throw DataError("manifest: iid table size disagrees with session entries");
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const CILData& cil, const std::string& config_hash = {}) {
    nlohmann::json sessions = nlohmann::json::array();
    for (std::size_t s = 0; s < cil.sessions.size(); ++s) {
        nlohmann::json entries = nlohmann::json::array();
        const auto& session = cil.sessions[s];
        const char* names[3] = {"train", "val", "test"};
        const std::vector<AuthorSplit>* splits[3] = {&session.train, &session.val, &session.test};
        for (int k = 0; k < 3; ++k) {
            for (const auto& entry : *splits[k]) {
                entries.push_back({{"iid", entry.iid},
                                   {"author_id", entry.author_id},
                                   {"split", names[k]},
                                   {"texts", entry.texts}});
            }
        }
        sessions.push_back({{"session_index", s}, {"entries", std::move(entries)}});
    }
    nlohmann::json doc{{"version", kManifestVersion},
                       {"prng", std::string(kRngName)},
                       {"seed", cil.seed},
                       {"ratios", cil.ratios},
                       {"split_fractions", cil.split_fractions},
                       {"sessions", std::move(sessions)},
                       {"checksum", detail::manifest_checksum(cil)}};
    if (!config_hash.empty()) doc["config_hash"] = config_hash;
    return doc;
}

inline void save_manifest(const CILData& cil, const std::filesystem::path& path,
                          const std::string& config_hash = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << manifest_to_json(cil, config_hash).dump(2) << "\n";
    if (!out) throw DataError("write failure on manifest: " + path.string());
}

inline CILData manifest_from_json(const nlohmann::json& doc) {
    if (!doc.contains("version") || doc["version"].get<int>() != kManifestVersion)
        throw DataError("manifest: version mismatch");
    CILData cil;
    cil.seed = doc.at("seed").get<std::uint64_t>();
    cil.ratios = doc.at("ratios").get<std::vector<double>>();
    cil.split_fractions = doc.at("split_fractions").get<std::array<double, 3>>();

    for (const auto& sess : doc.at("sessions")) {
        Session session;
        for (const auto& entry : sess.at("entries")) {
            AuthorSplit split;
            split.iid = entry.at("iid").get<int>();
            split.author_id = entry.at("author_id").get<std::string>();
            split.texts = entry.at("texts").get<std::vector<std::string>>();
            const std::string which = entry.at("split").get<std::string>();
            if (which == "train")
                session.train.push_back(std::move(split));
            else if (which == "val")
                session.val.push_back(std::move(split));
            else if (which == "test")
                session.test.push_back(std::move(split));
            else
                throw DataError("manifest: unknown split name '" + which + "'");
        }
        cil.sessions.push_back(std::move(session));
    }
    for (const auto& session : cil.sessions)
        for (const auto& entry : session.train) {
            if (static_cast<std::size_t>(entry.iid) != cil.iid_to_author.size())
                throw DataError("manifest: iids are not consecutive in processing order");
            cil.iid_to_author.push_back(entry.author_id);
        }

    detail::check_cil_invariants(cil);
    const std::string expect = doc.at("checksum").get<std::string>();
    const std::string actual = detail::manifest_checksum(cil);
    if (expect != actual) throw DataError("manifest: checksum mismatch on document payloads");
    return cil;
}

inline CILData load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest parse error: " + std::string(e.what()));
    }
    return manifest_from_json(doc);
}

}  // namespace cil
