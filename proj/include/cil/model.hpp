#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "cil/error.hpp"
#include "cil/features.hpp"
#include "cil/rng.hpp"

namespace cil {

inline constexpr int kModelVersion = 1;

struct Affine {
    Eigen::MatrixXd W;
    Eigen::VectorXd b;
};

struct TrainConfig {
    double learning_rate = 0.5;
    int epochs = 5;       // per session
    int batch_size = 32;  // both defaults mirror the usual text-classifier recipe
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw DataError("train config: learning_rate must be positive");
        if (epochs < 0) throw DataError("train config: epochs must be >= 0");
        if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
        if (weight_decay < 0.0) throw DataError("train config: weight_decay must be >= 0");
    }
};

// Shared trunk (affine + tanh, or identity when hidden_dim == 0) plus an
// ordered registry of per-session linear heads. Head h covers global class
// ids [class_offsets[h], class_offsets[h] + heads[h].W.rows()).
struct ModelState {
    int feature_dim = 0;
    int hidden_dim = 0;
    Affine trunk;  // empty matrices when hidden_dim == 0
    std::vector<Affine> heads;
    std::vector<int> class_offsets;

    int head_input_dim() const { return hidden_dim > 0 ? hidden_dim : feature_dim; }
    int num_heads() const { return static_cast<int>(heads.size()); }
    int head_classes(int h) const { return static_cast<int>(heads[h].W.rows()); }
    int total_classes() const {
        return heads.empty() ? 0 : class_offsets.back() + head_classes(num_heads() - 1);
    }
};

struct ParamSnapshot {
    ModelState model;  // deep copy; Eigen matrices copy by value
    int session = -1;
};

inline ParamSnapshot snapshot(const ModelState& model, int session = -1) {
    return ParamSnapshot{model, session};
}

// Same shape as the model's parameters; reused for gradients and for
// per-parameter importance weights.
struct ParamSet {
    Affine trunk;
    std::vector<Affine> heads;
};

inline ParamSet zeros_like(const ModelState& model) {
    ParamSet p;
    if (model.hidden_dim > 0) {
        p.trunk.W = Eigen::MatrixXd::Zero(model.trunk.W.rows(), model.trunk.W.cols());
        p.trunk.b = Eigen::VectorXd::Zero(model.trunk.b.size());
    }
    for (const auto& head : model.heads) {
        p.heads.push_back({Eigen::MatrixXd::Zero(head.W.rows(), head.W.cols()),
                           Eigen::VectorXd::Zero(head.b.size())});
    }
    return p;
}

struct TrainMask {
    bool trunk = true;
    std::vector<bool> heads;

    static TrainMask everything(const ModelState& model) {
        return TrainMask{true, std::vector<bool>(model.heads.size(), true)};
    }
    static TrainMask heads_only(const ModelState& model) {
        return TrainMask{false, std::vector<bool>(model.heads.size(), true)};
    }
    static TrainMask trunk_and_head(const ModelState& model, int h) {
        TrainMask m{true, std::vector<bool>(model.heads.size(), false)};
        m.heads[h] = true;
        return m;
    }
    static TrainMask head_only(const ModelState& model, int h) {
        TrainMask m{false, std::vector<bool>(model.heads.size(), false)};
        m.heads[h] = true;
        return m;
    }
};

// Head selection for forward/loss: all heads, heads 0..t, or head t alone.
struct HeadSelect {
    enum class Mode { all, up_to_t, only_t };
    Mode mode = Mode::all;
    int t = 0;

    static HeadSelect all() { return {Mode::all, 0}; }
    static HeadSelect up_to(int t) { return {Mode::up_to_t, t}; }
    static HeadSelect only(int t) { return {Mode::only_t, t}; }
};

namespace detail {

// Inclusive head index range for a selection.
inline std::pair<int, int> head_range(const ModelState& model, HeadSelect select) {
    if (model.heads.empty()) throw DataError("model has no heads");
    const int last = model.num_heads() - 1;
    switch (select.mode) {
        case HeadSelect::Mode::all: return {0, last};
        case HeadSelect::Mode::up_to_t:
            if (select.t < 0 || select.t > last) throw DataError("head selection out of range");
            return {0, select.t};
        case HeadSelect::Mode::only_t:
            if (select.t < 0 || select.t > last) throw DataError("head selection out of range");
            return {select.t, select.t};
    }
    throw DataError("unreachable head selection mode");
}

inline Eigen::VectorXd trunk_output(const ModelState& model, const FeatureVector& x) {
    if (x.size() != model.feature_dim)
        throw DataError("forward: feature dimension mismatch (got " + std::to_string(x.size()) +
                        ", model expects " + std::to_string(model.feature_dim) + ")");
    if (model.hidden_dim == 0) return x;
    return (model.trunk.W * x + model.trunk.b).array().tanh().matrix();
}

inline Eigen::VectorXd head_logits(const ModelState& model, const Eigen::VectorXd& h, int first_head,
                                   int last_head) {
    int n = 0;
    for (int k = first_head; k <= last_head; ++k) n += model.head_classes(k);
    Eigen::VectorXd logits(n);
    int at = 0;
    for (int k = first_head; k <= last_head; ++k) {
        logits.segment(at, model.head_classes(k)) = model.heads[k].W * h + model.heads[k].b;
        at += model.head_classes(k);
    }
    return logits;
}

}  // namespace detail

// Logits over the selected heads, ordered by global class id.
inline Eigen::VectorXd forward(const ModelState& model, const FeatureVector& x,
                               HeadSelect select = HeadSelect::all()) {
    const auto [first, last] = detail::head_range(model, select);
    return detail::head_logits(model, detail::trunk_output(model, x), first, last);
}

// Max-subtracted softmax.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - m).exp();
    return e / e.sum();
}

struct LabeledExample {
    FeatureVector x;
    int label = 0;  // global class id
};

using BatchView = std::vector<const LabeledExample*>;

inline BatchView make_batch_view(const std::vector<LabeledExample>& batch) {
    BatchView view;
    view.reserve(batch.size());
    for (const auto& ex : batch) view.push_back(&ex);
    return view;
}

struct LossGrads {
    double loss = 0.0;
    ParamSet grads;
};

namespace detail {

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits) for one
// sample, backpropagating through the selected heads and the tanh trunk.
inline void accumulate_logit_grads(const ModelState& model, const FeatureVector& x,
                                   const Eigen::VectorXd& h, const Eigen::VectorXd& dlogits,
                                   int first_head, int last_head, ParamSet& grads) {
    Eigen::VectorXd dh = Eigen::VectorXd::Zero(h.size());
    int at = 0;
    for (int k = first_head; k <= last_head; ++k) {
        const int c = model.head_classes(k);
        const auto dk = dlogits.segment(at, c);
        grads.heads[k].W.noalias() += dk * h.transpose();
        grads.heads[k].b += dk;
        dh.noalias() += model.heads[k].W.transpose() * dk;
        at += c;
    }
    if (model.hidden_dim > 0) {
        const Eigen::VectorXd da = dh.array() * (1.0 - h.array().square());
        grads.trunk.W.noalias() += da * x.transpose();
        grads.trunk.b += da;
    }
}

}  // namespace detail

// Mean cross-entropy over the batch plus weight_decay * 0.5 * ||theta||^2 over
// the trunk and selected heads, with exact analytic gradients. Labels are
// global class ids and must fall inside the selected head range; anything else
// signals a protocol bug upstream.
inline LossGrads ce_loss_and_grads(const ModelState& model, const BatchView& batch, HeadSelect select,
                                   double weight_decay = 0.0) {
    if (batch.empty()) throw DataError("ce_loss_and_grads: empty batch");
    const auto [first, last] = detail::head_range(model, select);
    const int class_base = model.class_offsets[first];
    int n_classes = 0;
    for (int k = first; k <= last; ++k) n_classes += model.head_classes(k);

    LossGrads out;
    out.grads = zeros_like(model);
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    for (const LabeledExample* ex : batch) {
        const int local = ex->label - class_base;
        if (local < 0 || local >= n_classes)
            throw DataError("ce_loss_and_grads: label " + std::to_string(ex->label) +
                            " outside selected head range [" + std::to_string(class_base) + ", " +
                            std::to_string(class_base + n_classes) + ")");
        const Eigen::VectorXd h = detail::trunk_output(model, ex->x);
        const Eigen::VectorXd logits = detail::head_logits(model, h, first, last);
        const Eigen::VectorXd p = softmax(logits);

        const double m = logits.maxCoeff();
        const double logsum = std::log((logits.array() - m).exp().sum()) + m;
        out.loss += inv_n * (logsum - logits[local]);

        Eigen::VectorXd delta = p;  // dL/dlogits for one sample
        delta[local] -= 1.0;
        delta *= inv_n;
        detail::accumulate_logit_grads(model, ex->x, h, delta, first, last, out.grads);
    }

    if (weight_decay > 0.0) {
        if (model.hidden_dim > 0) {
            out.loss += 0.5 * weight_decay * (model.trunk.W.squaredNorm() + model.trunk.b.squaredNorm());
            out.grads.trunk.W += weight_decay * model.trunk.W;
            out.grads.trunk.b += weight_decay * model.trunk.b;
        }
        for (int k = first; k <= last; ++k) {
            out.loss += 0.5 * weight_decay *
                        (model.heads[k].W.squaredNorm() + model.heads[k].b.squaredNorm());
            out.grads.heads[k].W += weight_decay * model.heads[k].W;
            out.grads.heads[k].b += weight_decay * model.heads[k].b;
        }
    }
    return out;
}

namespace detail {

inline void check_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite gradient in ") + what);
}

}  // namespace detail

// theta <- theta - lr * g where the mask permits; masked-off parameters stay
// bit-identical.
inline void sgd_step(ModelState& model, const ParamSet& grads, double lr, const TrainMask& mask) {
    if (mask.heads.size() != model.heads.size())
        throw DataError("sgd_step: mask shape mismatch");
    if (mask.trunk && model.hidden_dim > 0) {
        detail::check_finite(grads.trunk.W, "trunk.W");
        detail::check_finite(grads.trunk.b, "trunk.b");
        model.trunk.W -= lr * grads.trunk.W;
        model.trunk.b -= lr * grads.trunk.b;
    }
    for (std::size_t k = 0; k < model.heads.size(); ++k) {
        if (!mask.heads[k]) continue;
        detail::check_finite(grads.heads[k].W, ("head " + std::to_string(k) + ".W").c_str());
        detail::check_finite(grads.heads[k].b, ("head " + std::to_string(k) + ".b").c_str());
        model.heads[k].W -= lr * grads.heads[k].W;
        model.heads[k].b -= lr * grads.heads[k].b;
    }
}

namespace detail {

// Uniform +/- sqrt(6 / (fan_in + fan_out)), drawn row-major.
inline Eigen::MatrixXd scaled_uniform(int rows, int cols, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = uniform_real(rng, -a, a);
    return m;
}

}  // namespace detail

// Fresh model with an initialized trunk and no heads.
inline ModelState init_model(int feature_dim, int hidden_dim, Rng& rng) {
    if (feature_dim < 1) throw DataError("init_model: feature_dim must be >= 1");
    if (hidden_dim < 0) throw DataError("init_model: hidden_dim must be >= 0");
    ModelState model;
    model.feature_dim = feature_dim;
    model.hidden_dim = hidden_dim;
    if (hidden_dim > 0) {
        model.trunk.W = detail::scaled_uniform(hidden_dim, feature_dim, feature_dim, hidden_dim, rng);
        model.trunk.b = Eigen::VectorXd::Zero(hidden_dim);
    }
    return model;
}

// Appends a head for num_new_classes; existing parameters are untouched and
// class offsets stay contiguous.
inline void add_head(ModelState& model, int num_new_classes, Rng& rng) {
    if (num_new_classes < 1) throw DataError("add_head: need at least one class");
    const int in_dim = model.head_input_dim();
    Affine head;
    head.W = detail::scaled_uniform(num_new_classes, in_dim, in_dim, num_new_classes, rng);
    head.b = Eigen::VectorXd::Zero(num_new_classes);
    model.class_offsets.push_back(model.total_classes());
    model.heads.push_back(std::move(head));
}

// Argmax over all heads; ties break toward the lower class id.
inline int predict(const ModelState& model, const FeatureVector& x) {
    const Eigen::VectorXd logits = forward(model, x, HeadSelect::all());
    int best = 0;
    for (int i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

// --- persistence ---------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& doc) {
    const auto rows = static_cast<Eigen::Index>(doc.size());
    if (rows == 0) return {};
    const auto cols = static_cast<Eigen::Index>(doc[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = doc[r][c].get<double>();
    return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& doc) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(doc.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = doc[i].get<double>();
    return v;
}

inline nlohmann::json affine_to_json(const Affine& a) {
    return {{"W", matrix_to_json(a.W)}, {"b", vector_to_json(a.b)}};
}

inline Affine affine_from_json(const nlohmann::json& doc) {
    return Affine{matrix_from_json(doc.at("W")), vector_from_json(doc.at("b"))};
}

}  // namespace detail

inline nlohmann::json model_to_json(const ModelState& model, const FeaturizerConfig& featurizer,
                                    const std::vector<std::string>& iid_to_author,
                                    const std::string& config_hash = {}, int session = -1) {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& head : model.heads) heads.push_back(detail::affine_to_json(head));
    nlohmann::json doc{{"version", kModelVersion},
                       {"featurizer", featurizer_to_json(featurizer)},
                       {"feature_dim", model.feature_dim},
                       {"hidden_dim", model.hidden_dim},
                       {"heads", std::move(heads)},
                       {"class_offsets", model.class_offsets},
                       {"iid_to_author", iid_to_author},
                       {"session", session}};
    if (model.hidden_dim > 0) doc["trunk"] = detail::affine_to_json(model.trunk);
    if (!config_hash.empty()) doc["config_hash"] = config_hash;
    return doc;
}

struct LoadedModel {
    ModelState model;
    FeaturizerConfig featurizer;
    std::vector<std::string> iid_to_author;
    std::string config_hash;
    int session = -1;
};

// Refuses to load under a mismatched featurizer header when `expected` is given.
inline LoadedModel model_from_json(const nlohmann::json& doc,
                                   const std::optional<FeaturizerConfig>& expected = std::nullopt) {
    if (!doc.contains("version") || doc["version"].get<int>() != kModelVersion)
        throw DataError("model: version mismatch");
    LoadedModel out;
    out.featurizer = featurizer_from_json(doc.at("featurizer"));
    if (expected && featurizer_to_json(*expected) != featurizer_to_json(out.featurizer))
        throw DataError("model: featurizer header mismatch");
    out.model.feature_dim = doc.at("feature_dim").get<int>();
    out.model.hidden_dim = doc.at("hidden_dim").get<int>();
    if (out.model.hidden_dim > 0) out.model.trunk = detail::affine_from_json(doc.at("trunk"));
    for (const auto& head : doc.at("heads")) out.model.heads.push_back(detail::affine_from_json(head));
    out.model.class_offsets = doc.at("class_offsets").get<std::vector<int>>();
    out.iid_to_author = doc.at("iid_to_author").get<std::vector<std::string>>();
    if (doc.contains("config_hash")) out.config_hash = doc.at("config_hash").get<std::string>();
    out.session = doc.at("session").get<int>();
    return out;
}

inline void save_model(const ModelState& model, const FeaturizerConfig& featurizer,
                       const std::vector<std::string>& iid_to_author, const std::filesystem::path& path,
                       const std::string& config_hash = {}, int session = -1) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write model: " + path.string());
    out << model_to_json(model, featurizer, iid_to_author, config_hash, session).dump() << "\n";
    if (!out) throw DataError("write failure on model: " + path.string());
}

inline LoadedModel load_model(const std::filesystem::path& path,
                              const std::optional<FeaturizerConfig>& expected = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model parse error: " + std::string(e.what()));
    }
    return model_from_json(doc, expected);
}

}  // namespace cil
