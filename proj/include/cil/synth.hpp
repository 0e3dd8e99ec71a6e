#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cil/corpus.hpp"
#include "cil/error.hpp"
#include "cil/rng.hpp"

namespace cil {

// Synthetic corpus with per-author token distributions and controllable
// overlap through a shared pool: each token is drawn from the author's
// private vocabulary with probability (1 - overlap) and from the shared
// vocabulary otherwise. Private vocabularies are pairwise disjoint.
struct SynthConfig {
    int authors = 20;
    int docs_per_author = 40;
    int tokens_per_doc = 30;
    int vocab_per_author = 20;
    int shared_vocab = 50;
    double overlap = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (authors < 1 || docs_per_author < 1 || tokens_per_doc < 1 || vocab_per_author < 1)
            throw DataError("synth: counts must be >= 1");
        if (shared_vocab < 1 && overlap > 0.0)
            throw DataError("synth: overlap > 0 needs a non-empty shared vocabulary");
        if (overlap < 0.0 || overlap > 1.0) throw DataError("synth: overlap must lie in [0, 1]");
    }
};

namespace detail {

// Pseudorandom lowercase word, a pure function of its identity. Distinct ids
// give distinct character sequences with overwhelming probability, which is
// what keeps author vocabularies separable under n-gram features.
inline std::string synth_word(std::uint64_t key, int length = 8) {
    std::string word(static_cast<std::size_t>(length), 'a');
    std::uint64_t h = mix64(key);
    for (int i = 0; i < length; ++i) {
        word[static_cast<std::size_t>(i)] = static_cast<char>('a' + (h % 26));
        h = mix64(h);
    }
    return word;
}

}  // namespace detail

struct SynthDocument {
    std::string author_id;
    std::string text;
};

inline std::vector<SynthDocument> generate_synth_corpus(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "synth-corpus"));

    std::vector<std::string> shared;
    shared.reserve(static_cast<std::size_t>(cfg.shared_vocab));
    for (int v = 0; v < cfg.shared_vocab; ++v)
        shared.push_back(detail::synth_word(derive_seed(cfg.seed, "shared-word", static_cast<std::uint64_t>(v))));

    std::vector<SynthDocument> docs;
    docs.reserve(static_cast<std::size_t>(cfg.authors) * static_cast<std::size_t>(cfg.docs_per_author));
    for (int a = 0; a < cfg.authors; ++a) {
        std::vector<std::string> vocab;
        vocab.reserve(static_cast<std::size_t>(cfg.vocab_per_author));
        for (int v = 0; v < cfg.vocab_per_author; ++v) {
            const auto key = (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(v);
            vocab.push_back(detail::synth_word(derive_seed(cfg.seed, "author-word", key)));
        }
        const std::string author_id = "author" + std::to_string(a);
        for (int d = 0; d < cfg.docs_per_author; ++d) {
            std::string text;
            for (int w = 0; w < cfg.tokens_per_doc; ++w) {
                const bool from_shared = cfg.overlap > 0.0 && uniform_real(rng, 0.0, 1.0) < cfg.overlap;
                const auto& pool = from_shared ? shared : vocab;
                if (w) text.push_back(' ');
                text += pool[static_cast<std::size_t>(uniform_below(rng, pool.size()))];
            }
            docs.push_back({author_id, std::move(text)});
        }
    }
    return docs;
}

inline void write_jsonl(const std::vector<SynthDocument>& docs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write corpus: " + path.string());
    for (const auto& doc : docs) {
        out << nlohmann::json{{"author_id", doc.author_id}, {"text", doc.text}}.dump() << "\n";
    }
    if (!out) throw DataError("write failure on corpus: " + path.string());
}

// In-memory equivalent of writing and reloading the JSONL.
inline AuthorCorpus synth_author_corpus(const SynthConfig& cfg) {
    AuthorCorpus corpus;
    std::size_t at = 0;
    for (const auto& doc : generate_synth_corpus(cfg)) {
        if (corpus.authors.empty() || corpus.authors.back().author_id != doc.author_id) {
            corpus.authors.push_back(Author{doc.author_id, {}});
            at = corpus.authors.size() - 1;
        }
        auto& docs = corpus.authors[at].documents;
        docs.push_back(DocumentRecord{doc.author_id, doc.text, docs.size()});
    }
    return corpus;
}

}  // namespace cil
