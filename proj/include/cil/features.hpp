#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "cil/error.hpp"
#include "cil/hash.hpp"
#include "cil/rng.hpp"

namespace cil {

using FeatureVector = Eigen::VectorXd;

// Compile-time hash seed; part of the persisted featurizer header so saved
// models reject a rebuilt featurizer with different hashing.
inline constexpr std::uint64_t kFeatureHashSeed = 0x9E3779B97F4A7C15ULL;
inline constexpr std::string_view kFeatureHashName = "fnv1a64-mix64";

enum class TfMode { raw, sublinear };
enum class Normalize { none, l2 };
enum class Channel { char_ngram_hash, word_freq };

inline std::string to_string(TfMode m) { return m == TfMode::raw ? "raw" : "sublinear"; }
inline std::string to_string(Normalize n) { return n == Normalize::none ? "none" : "l2"; }
inline std::string to_string(Channel c) { return c == Channel::char_ngram_hash ? "char_ngram_hash" : "word_freq"; }

struct FeaturizerConfig {
    int min_n = 2;
    int max_n = 4;
    int dim = 1 << 16;  // hashed channel width, power of two
    TfMode tf_mode = TfMode::sublinear;
    Normalize normalize = Normalize::l2;
    std::vector<Channel> channels{Channel::char_ngram_hash};
    int word_vocab_size = 100;
    std::vector<std::string> word_vocab;  // fitted top-V list; required when word_freq enabled

    void validate() const {
        if (min_n < 1 || max_n < min_n || max_n > 8)
            throw DataError("featurizer: require 1 <= min_n <= max_n <= 8");
        if (dim < (1 << 8) || dim > (1 << 20) || (dim & (dim - 1)) != 0)
            throw DataError("featurizer: dim must be a power of two in [2^8, 2^20]");
        if (channels.empty()) throw DataError("featurizer: at least one channel required");
        if (word_vocab_size < 1) throw DataError("featurizer: word_vocab_size must be >= 1");
    }

    bool has_channel(Channel c) const {
        return std::find(channels.begin(), channels.end(), c) != channels.end();
    }

    int channel_dim(Channel c) const {
        return c == Channel::char_ngram_hash ? dim : static_cast<int>(word_vocab.size());
    }

    int total_dim() const {
        int n = 0;
        for (Channel c : channels) n += channel_dim(c);
        return n;
    }
};

namespace detail {

// Decodes one UTF-8 code point starting at `i`, returns its byte length.
// Invalid sequences are consumed one byte at a time so that featurization
// never fails on malformed input.
inline std::size_t utf8_advance(std::string_view s, std::size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((b0 & 0x80) == 0x00) len = 1;
    else if ((b0 & 0xE0) == 0xC0) len = 2;
    else if ((b0 & 0xF0) == 0xE0) len = 3;
    else if ((b0 & 0xF8) == 0xF0) len = 4;
    for (std::size_t k = 1; k < len; ++k) {
        if (i + k >= s.size() || (static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 1;
    }
    return std::min(len, s.size() - i);
}

// Byte offsets of code point boundaries, with s.size() appended.
inline std::vector<std::size_t> codepoint_offsets(std::string_view s) {
    std::vector<std::size_t> offsets;
    offsets.reserve(s.size() + 1);
    std::size_t i = 0;
    while (i < s.size()) {
        offsets.push_back(i);
        i += utf8_advance(s, i);
    }
    offsets.push_back(s.size());
    return offsets;
}

inline std::uint64_t feature_hash(std::string_view ngram) {
    return mix64(fnv1a64(ngram) ^ kFeatureHashSeed);
}

// Lowercased alphanumeric runs (ASCII folding only; non-ASCII bytes are kept
// verbatim inside a token).
inline std::vector<std::string> tokenize_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (unsigned char c : text) {
        const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80;
        const bool upper = c >= 'A' && c <= 'Z';
        if (keep || upper) {
            current.push_back(upper ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
        } else if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

}  // namespace detail

// Top-V words by total count over the given texts; ties break lexicographically.
inline std::vector<std::string> fit_word_vocab(const std::vector<std::string>& texts, int vocab_size) {
    std::map<std::string, std::int64_t> counts;
    for (const auto& text : texts)
        for (auto& w : detail::tokenize_words(text)) ++counts[w];
    std::vector<std::pair<std::string, std::int64_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> vocab;
    for (const auto& [word, count] : items) {
        if (static_cast<int>(vocab.size()) >= vocab_size) break;
        vocab.push_back(word);
    }
    return vocab;
}

// Deterministic text -> dense vector map. Character n-grams of each length in
// [min_n, max_n] are counted over code points and hashed into `dim` buckets;
// one hash bit supplies a +/-1 sign to reduce collision bias. Channels are
// concatenated in declared order; L2 normalization applies to the
// concatenated vector.
inline FeatureVector featurize(std::string_view text, const FeaturizerConfig& cfg) {
    cfg.validate();
    FeatureVector out = FeatureVector::Zero(cfg.total_dim());

    int offset = 0;
    for (Channel channel : cfg.channels) {
        if (channel == Channel::char_ngram_hash) {
            const auto cps = detail::codepoint_offsets(text);
            const std::size_t n_cps = cps.size() - 1;
            std::map<std::string_view, std::int64_t> counts;
            for (int n = cfg.min_n; n <= cfg.max_n; ++n) {
                if (n_cps < static_cast<std::size_t>(n)) break;
                for (std::size_t i = 0; i + n <= n_cps; ++i)
                    ++counts[text.substr(cps[i], cps[i + n] - cps[i])];
            }
            for (const auto& [ngram, count] : counts) {
                const std::uint64_t h = detail::feature_hash(ngram);
                const auto bucket = static_cast<int>(h & static_cast<std::uint64_t>(cfg.dim - 1));
                const double sign = (h >> 63) ? -1.0 : 1.0;
                const double tf = cfg.tf_mode == TfMode::raw
                                      ? static_cast<double>(count)
                                      : 1.0 + std::log(static_cast<double>(count));
                out[offset + bucket] += sign * tf;
            }
        } else {
            if (cfg.word_vocab.empty())
                throw DataError("featurizer: word_freq channel enabled but vocabulary not fitted");
            const auto words = detail::tokenize_words(text);
            if (!words.empty()) {
                std::map<std::string, std::int64_t> counts;
                for (const auto& w : words) ++counts[w];
                const auto total = static_cast<double>(words.size());
                for (std::size_t v = 0; v < cfg.word_vocab.size(); ++v) {
                    const auto it = counts.find(cfg.word_vocab[v]);
                    if (it != counts.end())
                        out[offset + static_cast<int>(v)] = static_cast<double>(it->second) / total;
                }
            }
        }
        offset += cfg.channel_dim(channel);
    }

    if (cfg.normalize == Normalize::l2) {
        const double norm = out.norm();
        if (norm > 0.0) out /= norm;
    }
    return out;
}

// Row i equals featurize(texts[i], cfg).
inline Eigen::MatrixXd featurize_batch(const std::vector<std::string>& texts, const FeaturizerConfig& cfg) {
    cfg.validate();
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(texts.size()), cfg.total_dim());
    for (std::size_t i = 0; i < texts.size(); ++i)
        rows.row(static_cast<Eigen::Index>(i)) = featurize(texts[i], cfg).transpose();
    return rows;
}

inline nlohmann::json featurizer_to_json(const FeaturizerConfig& cfg) {
    return {{"min_n", cfg.min_n},
            {"max_n", cfg.max_n},
            {"dim", cfg.dim},
            {"tf_mode", to_string(cfg.tf_mode)},
            {"normalize", to_string(cfg.normalize)},
            {"channels", [&] {
                 std::vector<std::string> names;
                 for (Channel c : cfg.channels) names.push_back(to_string(c));
                 return names;
             }()},
            {"word_vocab_size", cfg.word_vocab_size},
            {"word_vocab", cfg.word_vocab},
            {"hash", std::string(kFeatureHashName)},
            {"hash_seed", kFeatureHashSeed}};
}

inline FeaturizerConfig featurizer_from_json(const nlohmann::json& doc) {
    FeaturizerConfig cfg;
    cfg.min_n = doc.at("min_n").get<int>();
    cfg.max_n = doc.at("max_n").get<int>();
    cfg.dim = doc.at("dim").get<int>();
    const std::string tf = doc.at("tf_mode").get<std::string>();
    if (tf == "raw") cfg.tf_mode = TfMode::raw;
    else if (tf == "sublinear") cfg.tf_mode = TfMode::sublinear;
    else throw DataError("featurizer: unknown tf_mode '" + tf + "'");
    const std::string nm = doc.at("normalize").get<std::string>();
    if (nm == "none") cfg.normalize = Normalize::none;
    else if (nm == "l2") cfg.normalize = Normalize::l2;
    else throw DataError("featurizer: unknown normalize '" + nm + "'");
    cfg.channels.clear();
    for (const auto& name : doc.at("channels")) {
        const std::string s = name.get<std::string>();
        if (s == "char_ngram_hash") cfg.channels.push_back(Channel::char_ngram_hash);
        else if (s == "word_freq") cfg.channels.push_back(Channel::word_freq);
        else throw DataError("featurizer: unknown channel '" + s + "'");
    }
    if (doc.contains("word_vocab_size")) cfg.word_vocab_size = doc.at("word_vocab_size").get<int>();
    if (doc.contains("word_vocab")) cfg.word_vocab = doc.at("word_vocab").get<std::vector<std::string>>();
    if (doc.contains("hash") && doc.at("hash").get<std::string>() != std::string(kFeatureHashName))
        throw DataError("featurizer: hash function mismatch");
    if (doc.contains("hash_seed") && doc.at("hash_seed").get<std::uint64_t>() != kFeatureHashSeed)
        throw DataError("featurizer: hash seed mismatch");
    cfg.validate();
    return cfg;
}

}  // namespace cil
